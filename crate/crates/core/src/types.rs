//! Value types shared by every subsystem: wheel throttles, high-level
//! commands and planar poses.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Two-channel wheel throttle in `[-1, 1]`.
///
/// Steering is `s = left - right`; `s > 0` turns the robot to the right
/// because the left wheels run faster.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub left: f64,
    pub right: f64,
}

impl Action {
    pub const STOP: Action = Action { left: 0.0, right: 0.0 };

    /// Builds an action, clamping both channels into `[-1, 1]`.
    /// Returns `None` if either channel is not finite.
    pub fn new(left: f64, right: f64) -> Option<Self> {
        if !left.is_finite() || !right.is_finite() {
            return None;
        }
        Some(Action {
            left: left.clamp(-1.0, 1.0),
            right: right.clamp(-1.0, 1.0),
        })
    }

    /// Forward/steer mixing used by teleop and the follower:
    /// `(f + u/2, f - u/2)` clamped per channel.
    pub fn from_forward_steer(forward: f64, steer: f64) -> Self {
        Action::new(forward + steer / 2.0, forward - steer / 2.0).unwrap_or(Action::STOP)
    }

    pub fn is_finite(&self) -> bool {
        self.left.is_finite() && self.right.is_finite()
    }

    pub fn clamped(&self) -> Self {
        Action {
            left: self.left.clamp(-1.0, 1.0),
            right: self.right.clamp(-1.0, 1.0),
        }
    }

    pub fn steering(&self) -> f64 {
        self.left - self.right
    }

    /// Left/right mirror: swaps the channels, negating steering.
    pub fn mirrored(&self) -> Self {
        Action {
            left: self.right,
            right: self.left,
        }
    }

    /// Centered `[-1,1]` throttle to the stored `[0,1]` form.
    pub fn to_stored(&self) -> [f64; 2] {
        [(self.left + 1.0) / 2.0, (self.right + 1.0) / 2.0]
    }

    /// Stored `[0,1]` form back to a centered action (via `2a - 1`),
    /// clamping at the actuation boundary.
    pub fn from_stored(stored: [f64; 2]) -> Self {
        let l = stored[0].clamp(0.0, 1.0);
        let r = stored[1].clamp(0.0, 1.0);
        Action {
            left: 2.0 * l - 1.0,
            right: 2.0 * r - 1.0,
        }
    }
}

/// Indicator command telling the driver which branch to take at the next
/// intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Left,
    Straight,
    Right,
}

impl Command {
    pub const ALL: [Command; 3] = [Command::Left, Command::Straight, Command::Right];

    pub fn index(self) -> usize {
        match self {
            Command::Left => 0,
            Command::Straight => 1,
            Command::Right => 2,
        }
    }

    pub fn one_hot(self) -> [f32; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    pub fn mirrored(self) -> Self {
        match self {
            Command::Left => Command::Right,
            Command::Straight => Command::Straight,
            Command::Right => Command::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Left => "left",
            Command::Straight => "straight",
            Command::Right => "right",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Command::Left),
            "straight" => Ok(Command::Straight),
            "right" => Ok(Command::Right),
            other => Err(format!("unknown command `{other}`")),
        }
    }
}

/// Planar pose; `heading` is counter-clockwise from +x, kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn forward(&self) -> (f64, f64) {
        (self.heading.cos(), self.heading.sin())
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    if !a.is_finite() {
        return a;
    }
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_normalization_range() {
        for k in -20..20 {
            let a = k as f64 * 0.7;
            let n = normalize_angle(a);
            assert!(n > -PI && n <= PI, "{a} -> {n}");
            assert!(((a - n) / (2.0 * PI)).fract().abs() < 1e-9 || ((a - n) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
        assert_eq!(normalize_angle(-PI), PI);
    }

    #[test]
    fn stored_roundtrip_and_steering() {
        let a = Action::new(0.5, -0.25).unwrap();
        let back = Action::from_stored(a.to_stored());
        assert!((back.left - 0.5).abs() < 1e-12 && (back.right + 0.25).abs() < 1e-12);
        assert_eq!(a.steering(), 0.75);
        assert_eq!(a.mirrored().steering(), -0.75);
        assert!(Action::new(f64::NAN, 0.0).is_none());
        assert_eq!(Action::new(3.0, -3.0).unwrap(), Action { left: 1.0, right: -1.0 });
    }

    #[test]
    fn command_mirror_and_one_hot() {
        assert_eq!(Command::Left.mirrored(), Command::Right);
        assert_eq!(Command::Straight.mirrored(), Command::Straight);
        assert_eq!(Command::Right.one_hot(), [0.0, 0.0, 1.0]);
        assert_eq!("left".parse::<Command>().unwrap(), Command::Left);
    }
}
