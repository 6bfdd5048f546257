//! Security-strength arithmetic for digests and signatures.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrengthError {
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),
    #[error("invalid query: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SignatureScheme {
    EcdsaSecp256k1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Primitive {
    Digest { output_bits: u32, truncated_to_bits: u32 },
    Signature(SignatureScheme),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Property {
    Preimage,
    SecondPreimage,
    Collision,
    KeyRecovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Model {
    Classical,
    QuantumGrover,
    /// Conjectured cube-root collision attack; separate from Grover.
    QuantumCollisionBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StrengthQuery {
    pub primitive: Primitive,
    pub property: Property,
    pub model: Model,
}

impl StrengthQuery {
    pub fn digest(output_bits: u32, truncated_to_bits: u32, property: Property, model: Model) -> Self {
        StrengthQuery {
            primitive: Primitive::Digest {
                output_bits,
                truncated_to_bits,
            },
            property,
            model,
        }
    }

    pub fn signature(scheme: SignatureScheme, model: Model) -> Self {
        StrengthQuery {
            primitive: Primitive::Signature(scheme),
            property: Property::KeyRecovery,
            model,
        }
    }
}

/// Work, in bits, to break the queried property under the queried model.
pub fn strength_bits(query: &StrengthQuery) -> Result<f64, StrengthError> {
    let unsupported = || StrengthError::UnsupportedCombination(format!("{query:?}"));
    match query.primitive {
        Primitive::Digest {
            output_bits,
            truncated_to_bits,
        } => {
            if truncated_to_bits > output_bits {
                return Err(StrengthError::Invalid(format!(
                    "truncated_to_bits {truncated_to_bits} exceeds output_bits {output_bits}"
                )));
            }
            let b = truncated_to_bits as f64;
            match (query.property, query.model) {
                (Property::Preimage | Property::SecondPreimage, Model::Classical) => Ok(b),
                (Property::Collision, Model::Classical) => Ok(b / 2.0),
                (Property::Preimage | Property::SecondPreimage, Model::QuantumGrover) => Ok(b / 2.0),
                (Property::Collision, Model::QuantumCollisionBound) => Ok(b / 3.0),
                _ => Err(unsupported()),
            }
        }
        Primitive::Signature(SignatureScheme::EcdsaSecp256k1) => match (query.property, query.model) {
            (Property::KeyRecovery, Model::Classical) => Ok(128.0),
            // Shor's algorithm breaks discrete log outright
            (Property::KeyRecovery, Model::QuantumGrover | Model::QuantumCollisionBound) => Ok(0.0),
            _ => Err(unsupported()),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phaseout {
    Acceptable,
    PhaseOutBy2030,
    Disallowed,
}

impl fmt::Display for Phaseout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phaseout::Acceptable => "Acceptable",
            Phaseout::PhaseOutBy2030 => "PhaseOutBy2030",
            Phaseout::Disallowed => "Disallowed",
        })
    }
}

/// NIST-style thresholds: below 112 bits disallowed, 112 until 2030, 128 and up fine.
pub fn phaseout_check(bits: f64) -> Phaseout {
    if bits < 112.0 {
        Phaseout::Disallowed
    } else if bits < 128.0 {
        Phaseout::PhaseOutBy2030
    } else {
        Phaseout::Acceptable
    }
}

impl FromStr for Property {
    type Err = StrengthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "preimage" => Ok(Property::Preimage),
            "secondpreimage" => Ok(Property::SecondPreimage),
            "collision" => Ok(Property::Collision),
            "keyrecovery" => Ok(Property::KeyRecovery),
            _ => Err(StrengthError::Invalid(format!("unknown property {s:?}"))),
        }
    }
}

impl FromStr for Model {
    type Err = StrengthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "classical" => Ok(Model::Classical),
            "grover" | "quantumgrover" | "quantum" => Ok(Model::QuantumGrover),
            "collisionbound" | "quantumcollisionbound" | "cuberoot" => Ok(Model::QuantumCollisionBound),
            _ => Err(StrengthError::Invalid(format!("unknown model {s:?}"))),
        }
    }
}

/// One line of the strength table.
#[derive(Debug, Clone, Serialize)]
pub struct StrengthRow {
    pub primitive: String,
    pub property: Property,
    pub model: Model,
    pub bits: f64,
    pub verdict: Phaseout,
}

/// Strengths of the primitives a coordination chain relies on: a 256-bit
/// digest, its 160-bit account-id truncation, and secp256k1 signatures.
pub fn standard_table() -> Vec<StrengthRow> {
    let mut rows = Vec::new();
    let digests = [(256, 256, "digest-256"), (256, 160, "digest-256/160")];
    let combos = [
        (Property::Preimage, Model::Classical),
        (Property::SecondPreimage, Model::Classical),
        (Property::Collision, Model::Classical),
        (Property::Preimage, Model::QuantumGrover),
        (Property::Collision, Model::QuantumCollisionBound),
    ];
    for (out, trunc, name) in digests {
        for (property, model) in combos {
            let bits = strength_bits(&StrengthQuery::digest(out, trunc, property, model)).expect("supported");
            rows.push(StrengthRow {
                primitive: name.to_string(),
                property,
                model,
                bits,
                verdict: phaseout_check(bits),
            });
        }
    }
    for model in [Model::Classical, Model::QuantumGrover] {
        let bits = strength_bits(&StrengthQuery::signature(SignatureScheme::EcdsaSecp256k1, model)).expect("supported");
        rows.push(StrengthRow {
            primitive: "ecdsa-secp256k1".to_string(),
            property: Property::KeyRecovery,
            model,
            bits,
            verdict: phaseout_check(bits),
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(out: u32, t: u32, p: Property, m: Model) -> f64 {
        strength_bits(&StrengthQuery::digest(out, t, p, m)).unwrap()
    }

    #[test]
    fn reference_values() {
        assert_eq!(d(256, 256, Property::Preimage, Model::Classical), 256.0);
        assert_eq!(d(256, 256, Property::Collision, Model::Classical), 128.0);
        assert_eq!(d(256, 160, Property::SecondPreimage, Model::Classical), 160.0);
        assert_eq!(d(256, 256, Property::Preimage, Model::QuantumGrover), 128.0);
        let cb = d(256, 256, Property::Collision, Model::QuantumCollisionBound);
        assert_eq!((cb * 10.0).round() / 10.0, 85.3);
        let ecdsa = |m| strength_bits(&StrengthQuery::signature(SignatureScheme::EcdsaSecp256k1, m)).unwrap();
        assert_eq!(ecdsa(Model::Classical), 128.0);
        assert_eq!(ecdsa(Model::QuantumGrover), 0.0);
    }

    #[test]
    fn unsupported_and_invalid() {
        assert!(matches!(
            strength_bits(&StrengthQuery::digest(256, 256, Property::Collision, Model::QuantumGrover)),
            Err(StrengthError::UnsupportedCombination(_))
        ));
        assert!(matches!(
            strength_bits(&StrengthQuery::digest(256, 256, Property::KeyRecovery, Model::Classical)),
            Err(StrengthError::UnsupportedCombination(_))
        ));
        assert!(matches!(
            strength_bits(&StrengthQuery {
                primitive: Primitive::Signature(SignatureScheme::EcdsaSecp256k1),
                property: Property::Preimage,
                model: Model::Classical
            }),
            Err(StrengthError::UnsupportedCombination(_))
        ));
        assert!(matches!(
            strength_bits(&StrengthQuery::digest(160, 256, Property::Preimage, Model::Classical)),
            Err(StrengthError::Invalid(_))
        ));
    }

    #[test]
    fn phaseout_thresholds() {
        assert_eq!(phaseout_check(128.0), Phaseout::Acceptable);
        assert_eq!(phaseout_check(112.0), Phaseout::PhaseOutBy2030);
        assert_eq!(phaseout_check(80.0), Phaseout::Disallowed);
        assert_eq!(phaseout_check(127.9), Phaseout::PhaseOutBy2030);
    }

    #[test]
    fn parse_names() {
        assert_eq!("second-preimage".parse::<Property>().unwrap(), Property::SecondPreimage);
        assert_eq!("grover".parse::<Model>().unwrap(), Model::QuantumGrover);
        assert!("nope".parse::<Model>().is_err());
    }

    #[test]
    fn table_covers_primitives() {
        let t = standard_table();
        assert_eq!(t.len(), 12);
        assert!(t.iter().any(|r| r.primitive == "digest-256/160" && r.bits == 160.0));
    }
}
