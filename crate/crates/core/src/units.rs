//! Frequency scales and points in F1 x F2 space.
//!
//! All perceptual distances in the toolkit are measured on the
//! `2595 * log10(1 + f / 700)` mel scale. Distances between vowels are
//! Euclidean in (mel F1, mel F2).

use core::fmt;

use crate::Error;

const MEL_SCALE: f64 = 2595.0;
const MEL_CORNER_HZ: f64 = 700.0;

/// A frequency in Hertz. Always finite and non-negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "f64", into = "f64"))]
pub struct FrequencyHz(f64);

impl FrequencyHz {
    pub fn new(value: f64) -> Result<Self, Error> {
        if value.is_finite() && value >= 0.0 {
            Ok(Self(value))
        } else {
            Err(Error::Domain("frequency must be finite and non-negative"))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn to_mel(self) -> FrequencyMel {
        FrequencyMel(MEL_SCALE * libm::log10(1.0 + self.0 / MEL_CORNER_HZ))
    }
}

impl TryFrom<f64> for FrequencyHz {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self, Error> {
        Self::new(value)
    }
}

impl From<FrequencyHz> for f64 {
    fn from(f: FrequencyHz) -> f64 {
        f.0
    }
}

impl fmt::Display for FrequencyHz {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} Hz", self.0)
    }
}

/// A frequency on the mel scale. Always finite and non-negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "f64", into = "f64"))]
pub struct FrequencyMel(f64);

impl FrequencyMel {
    pub fn new(value: f64) -> Result<Self, Error> {
        if value.is_finite() && value >= 0.0 {
            Ok(Self(value))
        } else {
            Err(Error::Domain("mel value must be finite and non-negative"))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn to_hz(self) -> FrequencyHz {
        FrequencyHz(MEL_CORNER_HZ * (libm::pow(10.0, self.0 / MEL_SCALE) - 1.0))
    }
}

impl TryFrom<f64> for FrequencyMel {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self, Error> {
        Self::new(value)
    }
}

impl From<FrequencyMel> for f64 {
    fn from(m: FrequencyMel) -> f64 {
        m.0
    }
}

/// Converts Hertz to mels. Rejects negative and non-finite input.
pub fn hz_to_mel(hz: f64) -> Result<FrequencyMel, Error> {
    Ok(FrequencyHz::new(hz)?.to_mel())
}

/// Inverse of [`hz_to_mel`].
pub fn mel_to_hz(mel: f64) -> Result<FrequencyHz, Error> {
    Ok(FrequencyMel::new(mel)?.to_hz())
}

/// A vowel's first two formants. F2 is strictly above F1, and F1 is
/// strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "RawFormantPoint"))]
pub struct FormantPoint {
    f1: FrequencyHz,
    f2: FrequencyHz,
}

#[cfg(feature = "serde")]
#[derive(serde::Deserialize)]
struct RawFormantPoint {
    f1: f64,
    f2: f64,
}

#[cfg(feature = "serde")]
impl TryFrom<RawFormantPoint> for FormantPoint {
    type Error = Error;
    fn try_from(raw: RawFormantPoint) -> Result<Self, Error> {
        FormantPoint::new(raw.f1, raw.f2)
    }
}

impl FormantPoint {
    pub fn new(f1: f64, f2: f64) -> Result<Self, Error> {
        let f1 = FrequencyHz::new(f1)?;
        let f2 = FrequencyHz::new(f2)?;
        if f1.0 <= 0.0 {
            return Err(Error::Domain("F1 must be positive"));
        }
        if f2.0 <= f1.0 {
            return Err(Error::Domain("F2 must lie strictly above F1"));
        }
        Ok(Self { f1, f2 })
    }

    /// Checks the additional constraint that both formants lie below Nyquist.
    pub fn check_nyquist(&self, sample_rate: f64) -> Result<(), Error> {
        if self.f2.0 >= sample_rate / 2.0 {
            Err(Error::AboveNyquist {
                frequency: self.f2.0,
                nyquist: sample_rate / 2.0,
            })
        } else {
            Ok(())
        }
    }

    #[inline]
    pub fn f1(&self) -> f64 {
        self.f1.0
    }

    #[inline]
    pub fn f2(&self) -> f64 {
        self.f2.0
    }

    pub fn to_mel(&self) -> MelPoint {
        MelPoint {
            m1: self.f1.to_mel().0,
            m2: self.f2.to_mel().0,
        }
    }
}

impl fmt::Display for FormantPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.1}, {:.1}) Hz", self.f1.0, self.f2.0)
    }
}

/// A point in (mel F1, mel F2) coordinates. Unlike [`FormantPoint`] this is
/// an unconstrained vector so it can be interpolated, scaled and offset.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MelPoint {
    pub m1: f64,
    pub m2: f64,
}

impl MelPoint {
    pub const fn new(m1: f64, m2: f64) -> Self {
        Self { m1, m2 }
    }

    pub fn lerp(self, other: MelPoint, t: f64) -> MelPoint {
        MelPoint {
            m1: self.m1 + (other.m1 - self.m1) * t,
            m2: self.m2 + (other.m2 - self.m2) * t,
        }
    }

    pub fn distance(self, other: MelPoint) -> f64 {
        libm::hypot(self.m1 - other.m1, self.m2 - other.m2)
    }

    pub fn offset(self, direction: MelPoint, distance: f64) -> MelPoint {
        MelPoint {
            m1: self.m1 + direction.m1 * distance,
            m2: self.m2 + direction.m2 * distance,
        }
    }

    /// Maps back to Hz. Fails when the point leaves the valid formant region.
    pub fn to_formants(self) -> Result<FormantPoint, Error> {
        let f1 = mel_to_hz(self.m1)?;
        let f2 = mel_to_hz(self.m2)?;
        FormantPoint::new(f1.0, f2.0)
    }
}

/// Non-negative distance in mels.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MelDistance(f64);

impl MelDistance {
    pub const ZERO: MelDistance = MelDistance(0.0);

    pub fn new(value: f64) -> Result<Self, Error> {
        if value.is_finite() && value >= 0.0 {
            Ok(Self(value))
        } else {
            Err(Error::Domain("mel distance must be finite and non-negative"))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Euclidean distance between two formant points in (mel F1, mel F2).
pub fn mel_distance(a: &FormantPoint, b: &FormantPoint) -> MelDistance {
    MelDistance(a.to_mel().distance(b.to_mel()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn mel_reference_values() {
        assert_eq!(hz_to_mel(0.0).unwrap().value(), 0.0);
        assert_abs_diff_eq!(hz_to_mel(1000.0).unwrap().value(), 1000.0, epsilon = 0.1);
        assert_abs_diff_eq!(hz_to_mel(700.0).unwrap().value(), 781.2, epsilon = 0.1);
        assert_eq!(mel_to_hz(0.0).unwrap().value(), 0.0);
        assert_abs_diff_eq!(mel_to_hz(781.2).unwrap().value(), 700.0, epsilon = 0.1);
    }

    #[test]
    fn round_trip_named_values() {
        for f in [100.0, 250.0, 2290.0] {
            let back = mel_to_hz(hz_to_mel(f).unwrap().value()).unwrap().value();
            assert!(((back - f) / f).abs() < 1e-6);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(hz_to_mel(-1.0).is_err());
        assert!(hz_to_mel(f64::NAN).is_err());
        assert!(hz_to_mel(f64::INFINITY).is_err());
        assert!(mel_to_hz(-0.5).is_err());
    }

    #[test]
    fn formant_point_ordering() {
        assert!(FormantPoint::new(300.0, 2200.0).is_ok());
        assert!(FormantPoint::new(2200.0, 300.0).is_err());
        assert!(FormantPoint::new(500.0, 500.0).is_err());
        assert!(FormantPoint::new(0.0, 500.0).is_err());
        let p = FormantPoint::new(300.0, 2200.0).unwrap();
        assert!(p.check_nyquist(4000.0).is_err());
        assert!(p.check_nyquist(16000.0).is_ok());
    }

    #[test]
    fn distance_matches_two_line_oracle() {
        // mel by hand, then Pythagoras
        let m = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
        let expected = ((m(300.0) - m(350.0)).powi(2) + (m(2200.0) - m(2100.0)).powi(2)).sqrt();
        let a = FormantPoint::new(300.0, 2200.0).unwrap();
        let b = FormantPoint::new(350.0, 2100.0).unwrap();
        assert_abs_diff_eq!(mel_distance(&a, &b).value(), expected, epsilon = 1e-9);
        let c = FormantPoint::new(270.0, 2290.0).unwrap();
        assert_eq!(mel_distance(&c, &c).value(), 0.0);
    }

    fn point() -> impl Strategy<Value = FormantPoint> {
        (150.0f64..900.0, 0.0f64..2500.0)
            .prop_map(|(f1, gap)| FormantPoint::new(f1, f1 + 100.0 + gap).unwrap())
    }

    proptest! {
        #[test]
        fn mel_is_strictly_monotone(a in 0.0f64..8000.0, b in 0.0f64..8000.0) {
            prop_assume!(a != b);
            let (ma, mb) = (hz_to_mel(a).unwrap().value(), hz_to_mel(b).unwrap().value());
            prop_assert_eq!(a < b, ma < mb);
        }

        #[test]
        fn mel_round_trip(f in 1.0f64..8000.0) {
            let back = mel_to_hz(hz_to_mel(f).unwrap().value()).unwrap().value();
            prop_assert!(((back - f) / f).abs() < 1e-6);
        }

        #[test]
        fn mel_distance_is_a_metric(a in point(), b in point(), c in point()) {
            let ab = mel_distance(&a, &b).value();
            let ba = mel_distance(&b, &a).value();
            let bc = mel_distance(&b, &c).value();
            let ac = mel_distance(&a, &c).value();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(mel_distance(&a, &a).value(), 0.0);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
