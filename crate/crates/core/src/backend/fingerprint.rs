use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GenerationParams;
use crate::prompting::RenderedPrompt;

/// SHA-256 of a request's content, rendered as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub [u8; 32]);

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for Fingerprint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|e| format!("bad fingerprint {s:?}: {e}"))?;
        Ok(Fingerprint(out))
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

const DOMAIN: &[u8] = b"cotkt/request/v1";

fn put(h: &mut Sha256, field: &[u8]) {
    h.update((field.len() as u64).to_le_bytes());
    h.update(field);
}

/// Fingerprint of the first sample for `(prompt, params, model_id)`.
pub fn fingerprint(
    prompt: &RenderedPrompt,
    params: &GenerationParams,
    model_id: &str,
) -> Fingerprint {
    fingerprint_request(&prompt.text, params, model_id, 0)
}

/// Length-prefixed, little-endian encoding of every reply-determining field.
/// Floats hash by bit pattern.
pub fn fingerprint_request(
    prompt_text: &str,
    params: &GenerationParams,
    model_id: &str,
    sample_index: u32,
) -> Fingerprint {
    let mut h = Sha256::new();
    put(&mut h, DOMAIN);
    put(&mut h, model_id.as_bytes());
    put(&mut h, prompt_text.as_bytes());
    h.update([u8::from(params.sample)]);
    h.update(params.temperature.to_bits().to_le_bytes());
    h.update(params.top_p.to_bits().to_le_bytes());
    h.update(params.top_k.to_le_bytes());
    h.update(params.max_tokens.to_le_bytes());
    h.update(sample_index.to_le_bytes());
    Fingerprint(h.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::TemplateId;
    use std::collections::HashSet;

    fn p(text: &str) -> RenderedPrompt {
        RenderedPrompt {
            text: text.into(),
            template_id: TemplateId::CotExtraction,
            item_id: "x".into(),
        }
    }

    #[test]
    fn stable_and_sensitive() {
        let params = GenerationParams::default();
        assert_eq!(
            fingerprint(&p("hello"), &params, "m"),
            fingerprint(&p("hello"), &params, "m")
        );
        assert_ne!(
            fingerprint(&p("hello"), &params, "m"),
            fingerprint(&p("hello "), &params, "m")
        );
        assert_ne!(
            fingerprint(&p("hello"), &params, "m"),
            fingerprint(&p("hello"), &params, "m2")
        );
        let hotter = GenerationParams {
            temperature: 0.8,
            ..params
        };
        assert_ne!(
            fingerprint(&p("hello"), &params, "m"),
            fingerprint(&p("hello"), &hotter, "m")
        );
        assert_ne!(
            fingerprint_request("hello", &params, "m", 0),
            fingerprint_request("hello", &params, "m", 1)
        );
    }

    #[test]
    fn field_boundaries_do_not_alias() {
        let params = GenerationParams::default();
        assert_ne!(
            fingerprint(&p("bc"), &params, "a"),
            fingerprint(&p("c"), &params, "ab")
        );
    }

    #[test]
    fn frozen_value() {
        // pinned so that checked-in replay fixtures stay valid
        let fp = fingerprint(
            &p("Answer and Confidence (0-100):"),
            &GenerationParams::default(),
            "vicuna-7b",
        );
        assert_eq!(
            fp.to_string(),
            include_str!("../../tests/fixtures/frozen_fingerprint.txt").trim()
        );
    }

    #[test]
    fn thousand_distinct_prompts() {
        let params = GenerationParams::default();
        let mut seen = HashSet::new();
        let mut state = 0x9e3779b97f4a7c15u64;
        for i in 0..1000 {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let text = format!("prompt {i} {state:x}");
            assert!(seen.insert(fingerprint(&p(&text), &params, "m")));
        }
        assert_eq!(seen.len(), 1000);
    }

    #[test]
    fn hex_round_trip() {
        let fp = fingerprint(&p("x"), &GenerationParams::default(), "m");
        assert_eq!(fp.to_string().parse::<Fingerprint>().unwrap(), fp);
        assert!("zz".parse::<Fingerprint>().is_err());
    }
}
