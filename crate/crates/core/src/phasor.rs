//! Complex per-unit quantities.
//!
//! A [`Phasor`] is a plain `Complex64`. On disk it is written as
//! `{"re": .., "im": ..}`, which is what the [`serde_phasor`] helpers do.

use num_complex::Complex64;

pub type Phasor = Complex64;

/// Builds a phasor from a magnitude and an angle in degrees.
pub fn from_polar_deg(magnitude: f64, angle_deg: f64) -> Phasor {
    Complex64::from_polar(magnitude, angle_deg.to_radians())
}

pub fn is_finite(p: Phasor) -> bool {
    p.re.is_finite() && p.im.is_finite()
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct Repr {
    re: f64,
    im: f64,
}

/// `#[serde(with = "serde_phasor")]` for `Phasor` fields.
pub mod serde_phasor {
    use super::{Phasor, Repr};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Phasor, s: S) -> Result<S::Ok, S::Error> {
        Repr { re: p.re, im: p.im }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Phasor, D::Error> {
        let r = Repr::deserialize(d)?;
        Ok(Phasor::new(r.re, r.im))
    }

    pub mod option {
        use super::super::{Phasor, Repr};
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(p: &Option<Phasor>, s: S) -> Result<S::Ok, S::Error> {
            p.map(|p| Repr { re: p.re, im: p.im }).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Phasor>, D::Error> {
            Ok(Option::<Repr>::deserialize(d)?.map(|r| Phasor::new(r.re, r.im)))
        }
    }
}
