//! Text codec for the four policy actions.

use std::fmt;

use crate::error::{Error, Result};

/// Magnitudes are held in tenths so that one-decimal text round-trips exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    /// Degrees × 10, in `(0, 1800]`.
    TurnLeft(u32),
    TurnRight(u32),
    /// Centimeters × 10, in `(0, 5000]`.
    Forward(u32),
    Stop,
}

const MAX_TURN: u32 = 1800;
const MAX_FORWARD: u32 = 5000;

impl Action {
    pub fn turn_left(degrees: f64) -> Result<Self> {
        Self::TurnLeft(to_tenths(degrees)?).validated()
    }

    pub fn turn_right(degrees: f64) -> Result<Self> {
        Self::TurnRight(to_tenths(degrees)?).validated()
    }

    pub fn forward(cm: f64) -> Result<Self> {
        Self::Forward(to_tenths(cm)?).validated()
    }

    pub fn validated(self) -> Result<Self> {
        let ok = match self {
            Self::TurnLeft(t) | Self::TurnRight(t) => (1..=MAX_TURN).contains(&t),
            Self::Forward(d) => (1..=MAX_FORWARD).contains(&d),
            Self::Stop => true,
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::ActionProtocol(format!("{self:?} is out of range")))
        }
    }

    /// Magnitude in degrees or centimeters.
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::TurnLeft(t) | Self::TurnRight(t) | Self::Forward(t) => Some(*t as f64 / 10.0),
            Self::Stop => None,
        }
    }

    /// Parses one action in canonical grammar; numbers may be integers or
    /// carry exactly one decimal. Surrounding whitespace is ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let s = text.trim();
        if s == "Stop." {
            return Ok(Self::Stop);
        }
        let bad = || Error::ActionProtocol(format!("unrecognized action {text:?}"));
        let (ctor, rest): (fn(u32) -> Action, &str) = if let Some(r) = s.strip_prefix("Turn left ") {
            (Self::TurnLeft, r.strip_suffix(" degree.").ok_or_else(bad)?)
        } else if let Some(r) = s.strip_prefix("Turn right ") {
            (Self::TurnRight, r.strip_suffix(" degree.").ok_or_else(bad)?)
        } else if let Some(r) = s.strip_prefix("Forward ") {
            (Self::Forward, r.strip_suffix(" cm.").ok_or_else(bad)?)
        } else {
            return Err(bad());
        };
        ctor(parse_tenths(rest).ok_or_else(bad)?).validated()
    }
}

impl std::str::FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

fn to_tenths(x: f64) -> Result<u32> {
    let t = (x * 10.0).round();
    if !(t.is_finite() && t >= 0.0 && t <= u32::MAX as f64) || ((t / 10.0) - x).abs() > 1e-9 {
        return Err(Error::ActionProtocol(format!("{x} is not representable with one decimal")));
    }
    Ok(t as u32)
}

fn parse_tenths(s: &str) -> Option<u32> {
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s, None),
    };
    if int.is_empty() || int.len() > 6 || !int.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut t: u32 = int.parse::<u32>().ok()? * 10;
    if let Some(f) = frac {
        if f.len() != 1 || !f.as_bytes()[0].is_ascii_digit() {
            return None;
        }
        t += (f.as_bytes()[0] - b'0') as u32;
    }
    Some(t)
}

struct Tenths(u32);

impl fmt::Display for Tenths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 10 == 0 {
            write!(f, "{}", self.0 / 10)
        } else {
            write!(f, "{}.{}", self.0 / 10, self.0 % 10)
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TurnLeft(t) => write!(f, "Turn left {} degree.", Tenths(*t)),
            Self::TurnRight(t) => write!(f, "Turn right {} degree.", Tenths(*t)),
            Self::Forward(d) => write!(f, "Forward {} cm.", Tenths(*d)),
            Self::Stop => f.write_str("Stop."),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_examples() {
        assert_eq!(Action::parse("Forward 25 cm.").unwrap(), Action::Forward(250));
        assert_eq!(Action::Forward(250).to_string(), "Forward 25 cm.");
        assert_eq!(Action::parse("Stop.").unwrap(), Action::Stop);
        assert_eq!(Action::parse("Turn left 15.5 degree.").unwrap(), Action::TurnLeft(155));
        assert_eq!(Action::parse("Turn right 30.0 degree.").unwrap().to_string(), "Turn right 30 degree.");
        assert_eq!(Action::parse("Forward 007 cm.").unwrap().to_string(), "Forward 7 cm.");
    }

    #[test]
    fn off_grammar_rejected() {
        for s in [
            "Jump 3 m.",
            "Forward 0 cm.",
            "Forward 500.1 cm.",
            "Turn left 181 degree.",
            "Forward 1.25 cm.",
            "Forward -3 cm.",
            "Forward . cm.",
            "Forward 3. cm.",
            "stop.",
            "Turn left 30 degrees.",
            "",
        ] {
            assert!(matches!(Action::parse(s), Err(Error::ActionProtocol(_))), "{s:?}");
        }
    }

    #[test]
    fn bounds_inclusive() {
        assert_eq!(Action::parse("Turn left 180 degree.").unwrap(), Action::TurnLeft(1800));
        assert_eq!(Action::parse("Forward 500 cm.").unwrap(), Action::Forward(5000));
        assert_eq!(Action::parse("Forward 0.1 cm.").unwrap(), Action::Forward(1));
        assert!(Action::forward(12.34).is_err());
        assert_eq!(Action::turn_right(12.5).unwrap(), Action::TurnRight(125));
    }
}
