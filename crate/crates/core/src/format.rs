//! Text output with 17 significant digits for every float.

use std::io;

use serde::Serialize;

/// `{:.16e}` formatting; non-finite values print as `NaN`/`inf`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON formatter writing floats with 17 significant digits (non-finite as `null`).
#[derive(Clone, Copy, Debug, Default)]
pub struct Fmt17;

impl serde_json::ser::Formatter for Fmt17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Compact JSON with 17-digit floats.
pub fn to_json(value: &impl Serialize) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Fmt17);
    value
        .serialize(&mut ser)
        .expect("serializing to memory cannot fail");
    String::from_utf8(out).expect("serde_json writes UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        for x in [0.1, 1.0 / 3.0, 5.110932705708289, -2.5e-300, 1e300] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        let json = to_json(&serde_json::json!({"a": [0.1, 2.0], "b": f64::NAN}));
        assert_eq!(json, r#"{"a":[1.0000000000000001e-1,2.0000000000000000e0],"b":null}"#);
        let back: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(back["a"][0].as_f64().unwrap(), 0.1);
    }
}
