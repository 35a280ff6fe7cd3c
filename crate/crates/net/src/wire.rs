//! Little-endian f64 helpers shared by the endpoints and the client.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

pub fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn f64_from_bytes(bytes: &[u8]) -> Option<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    )
}

/// Base64 of the little-endian bytes.
pub fn encode_field(values: &[f64]) -> String {
    STANDARD.encode(f64_bytes(values))
}

pub fn decode_field(text: &str) -> Option<Vec<f64>> {
    f64_from_bytes(&STANDARD.decode(text).ok()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip() {
        let v = [0.0, -1.5, f64::MIN_POSITIVE, 1e300];
        assert_eq!(decode_field(&encode_field(&v)).unwrap(), v);
        assert!(f64_from_bytes(&[0; 7]).is_none());
    }
}
