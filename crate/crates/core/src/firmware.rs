//! Microcontroller emulator: the ASCII serial protocol, signed PWM
//! conversion, wheel-encoder counting, battery averaging and telemetry.
//!
//! Wire grammar, one message per LF-terminated line of at most 64 bytes:
//!
//! ```text
//! c,<int>,<int>            control, each in -255..=255
//! i,<0|1>,<0|1>            indicator LEDs
//! s,<mV>,<ticks_l>,<ticks_r>,<sonar_cm>
//! ```
//!
//! Integers are canonical decimal: no leading zeros, no `+`, no `-0`.

use std::f64::consts::TAU;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Action;

pub const MAX_PAYLOAD: usize = 64;
pub const PWM_MAX: i32 = 255;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("line is not terminated by LF")]
    Unterminated,
    #[error("payload of {0} bytes exceeds {MAX_PAYLOAD}")]
    Overlong(usize),
    #[error("payload is not printable ASCII")]
    NotAscii,
    #[error("unknown message tag")]
    UnknownTag,
    #[error("expected {expected} fields, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("field {0} is not a canonical integer")]
    BadInteger(usize),
    #[error("field {0} is out of range")]
    OutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Message {
    Control { left: i16, right: i16 },
    Indicator { left: bool, right: bool },
    Status { millivolts: u32, ticks_l: u32, ticks_r: u32, sonar_cm: u32 },
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Message::Control { left, right } => write!(f, "c,{left},{right}"),
            Message::Indicator { left, right } => write!(f, "i,{},{}", left as u8, right as u8),
            Message::Status {
                millivolts,
                ticks_l,
                ticks_r,
                sonar_cm,
            } => write!(f, "s,{millivolts},{ticks_l},{ticks_r},{sonar_cm}"),
        }
    }
}

impl Message {
    /// Payload plus the LF terminator.
    pub fn to_line(&self) -> Vec<u8> {
        let mut v = self.to_string().into_bytes();
        v.push(b'\n');
        v
    }

    /// Whether the message is within its value ranges (status fields are
    /// unbounded apart from the payload length).
    pub fn is_valid(&self) -> bool {
        match *self {
            Message::Control { left, right } => left.unsigned_abs() <= 255 && right.unsigned_abs() <= 255,
            _ => self.to_string().len() <= MAX_PAYLOAD,
        }
    }
}

fn parse_uint(field: &str, idx: usize) -> Result<u64, ProtocolError> {
    let b = field.as_bytes();
    if b.is_empty() || b.len() > 10 || !b.iter().all(u8::is_ascii_digit) || (b.len() > 1 && b[0] == b'0') {
        return Err(ProtocolError::BadInteger(idx));
    }
    field.parse::<u64>().map_err(|_| ProtocolError::BadInteger(idx))
}

fn parse_int(field: &str, idx: usize) -> Result<i16, ProtocolError> {
    let (neg, digits) = match field.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, field),
    };
    if digits.len() > 3 {
        return Err(ProtocolError::BadInteger(idx));
    }
    let v = parse_uint(digits, idx)?;
    if neg && v == 0 {
        return Err(ProtocolError::BadInteger(idx));
    }
    if v > PWM_MAX as u64 {
        return Err(ProtocolError::OutOfRange(idx));
    }
    Ok(if neg { -(v as i16) } else { v as i16 })
}

fn parse_bool(field: &str, idx: usize) -> Result<bool, ProtocolError> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(ProtocolError::BadInteger(idx)),
    }
}

/// Parses one LF-terminated line. Total over arbitrary bytes.
pub fn parse_line(bytes: &[u8]) -> Result<Message, ProtocolError> {
    let Some((&b'\n', payload)) = bytes.split_last() else {
        return Err(ProtocolError::Unterminated);
    };
    parse_payload(payload)
}

/// Parses a payload without its terminator.
pub fn parse_payload(payload: &[u8]) -> Result<Message, ProtocolError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(ProtocolError::Overlong(payload.len()));
    }
    if !payload.iter().all(|b| (0x20..0x7f).contains(b)) {
        return Err(ProtocolError::NotAscii);
    }
    // printable ASCII is valid UTF-8
    let text = std::str::from_utf8(payload).map_err(|_| ProtocolError::NotAscii)?;
    let fields: Vec<&str> = text.split(',').collect();
    let arity = |expected: usize| {
        if fields.len() == expected {
            Ok(())
        } else {
            Err(ProtocolError::Arity {
                expected,
                got: fields.len(),
            })
        }
    };
    match fields[0] {
        "c" => {
            arity(3)?;
            Ok(Message::Control {
                left: parse_int(fields[1], 1)?,
                right: parse_int(fields[2], 2)?,
            })
        }
        "i" => {
            arity(3)?;
            Ok(Message::Indicator {
                left: parse_bool(fields[1], 1)?,
                right: parse_bool(fields[2], 2)?,
            })
        }
        "s" => {
            arity(5)?;
            let mut v = [0u32; 4];
            for (i, slot) in v.iter_mut().enumerate() {
                let x = parse_uint(fields[i + 1], i + 1)?;
                *slot = u32::try_from(x).map_err(|_| ProtocolError::OutOfRange(i + 1))?;
            }
            Ok(Message::Status {
                millivolts: v[0],
                ticks_l: v[1],
                ticks_r: v[2],
                sonar_cm: v[3],
            })
        }
        _ => Err(ProtocolError::UnknownTag),
    }
}

/// Rounds half away from zero.
fn round_away(x: f64) -> f64 {
    x.signum() * (x.abs() + 0.5).floor()
}

/// Signed duty per side: `round(255 a)` clamped to `[-255, 255]`.
pub fn action_to_pwm(action: Action) -> (i16, i16) {
    let conv = |a: f64| {
        if !a.is_finite() {
            return 0;
        }
        round_away(255.0 * a).clamp(-255.0, 255.0) as i16
    };
    (conv(action.left), conv(action.right))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McuConfig {
    pub ticks_per_rev: u32,
    pub divider_ratio: f64,
    pub adc_reference: f64,
    pub ema_alpha: f64,
    pub telemetry_period_ms: u64,
    pub initial_battery: f64,
}

impl Default for McuConfig {
    fn default() -> Self {
        McuConfig {
            ticks_per_rev: 20,
            divider_ratio: 3.0,
            adc_reference: 5.0,
            ema_alpha: 0.1,
            telemetry_period_ms: 50,
            initial_battery: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McuState {
    pub pwm_l: i16,
    pub pwm_r: i16,
    pub led_l: bool,
    pub led_r: bool,
    pub tick_count_l: u64,
    pub tick_count_r: u64,
    /// Volts.
    pub battery_avg: f64,
    pub sonar_last: u32,
    pub uptime_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum McuError {
    #[error("ADC reading {0} outside 0..=1023")]
    AdcRange(u32),
    #[error("non-finite wheel rotation")]
    NonFinite,
}

/// The emulated board.
#[derive(Debug, Clone, PartialEq)]
pub struct Mcu {
    pub cfg: McuConfig,
    pub state: McuState,
    /// Total absolute wheel rotation since the last reset, radians.
    angle_l: f64,
    angle_r: f64,
    last_telemetry_ms: Option<u64>,
}

impl Default for Mcu {
    fn default() -> Self {
        Self::new(McuConfig::default())
    }
}

impl Mcu {
    pub fn new(cfg: McuConfig) -> Self {
        let battery_avg = cfg.initial_battery;
        Mcu {
            cfg,
            state: McuState {
                pwm_l: 0,
                pwm_r: 0,
                led_l: false,
                led_r: false,
                tick_count_l: 0,
                tick_count_r: 0,
                battery_avg,
                sonar_last: 300,
                uptime_ms: 0,
            },
            angle_l: 0.0,
            angle_r: 0.0,
            last_telemetry_ms: None,
        }
    }

    /// Applies an inbound message. Status messages are outbound only and
    /// are ignored.
    pub fn handle(&mut self, msg: &Message) {
        match *msg {
            Message::Control { left, right } => {
                self.state.pwm_l = left.clamp(-255, 255);
                self.state.pwm_r = right.clamp(-255, 255);
            }
            Message::Indicator { left, right } => {
                self.state.led_l = left;
                self.state.led_r = right;
            }
            Message::Status { .. } => {}
        }
    }

    /// Parses and applies one raw line; malformed input leaves the state untouched.
    pub fn receive(&mut self, line: &[u8]) -> Result<Message, ProtocolError> {
        let m = parse_line(line)?;
        self.handle(&m);
        Ok(m)
    }

    /// Duty fractions currently commanded to the motor driver.
    pub fn duty(&self) -> Action {
        Action {
            left: self.state.pwm_l as f64 / 255.0,
            right: self.state.pwm_r as f64 / 255.0,
        }
    }

    /// Counts encoder slots passed by each wheel; the sub-slot residual
    /// carries across calls. Direction is not sensed.
    pub fn tick_odometry(&mut self, delta_l: f64, delta_r: f64) -> Result<(), McuError> {
        if !delta_l.is_finite() || !delta_r.is_finite() {
            return Err(McuError::NonFinite);
        }
        let slot = TAU / self.cfg.ticks_per_rev as f64;
        self.angle_l += delta_l.abs();
        self.angle_r += delta_r.abs();
        self.state.tick_count_l = (self.angle_l / slot).floor() as u64;
        self.state.tick_count_r = (self.angle_r / slot).floor() as u64;
        Ok(())
    }

    pub fn reset_ticks(&mut self) {
        self.angle_l = 0.0;
        self.angle_r = 0.0;
        self.state.tick_count_l = 0;
        self.state.tick_count_r = 0;
    }

    /// Volts seen at the battery for a raw 10-bit reading.
    pub fn adc_to_volts(&self, reading: u32) -> f64 {
        reading as f64 / 1023.0 * self.cfg.adc_reference * self.cfg.divider_ratio
    }

    /// Reading the ADC would produce for a battery voltage.
    pub fn volts_to_adc(&self, volts: f64) -> u32 {
        let r = volts / (self.cfg.adc_reference * self.cfg.divider_ratio) * 1023.0;
        r.round().clamp(0.0, 1023.0) as u32
    }

    pub fn update_battery(&mut self, reading: u32) -> Result<(), McuError> {
        if reading > 1023 {
            return Err(McuError::AdcRange(reading));
        }
        let v = self.adc_to_volts(reading);
        let a = self.cfg.ema_alpha;
        self.state.battery_avg = if a >= 1.0 { v } else { (1.0 - a) * self.state.battery_avg + a * v };
        Ok(())
    }

    pub fn set_sonar(&mut self, meters: f64) {
        self.state.sonar_last = (meters * 100.0).round().clamp(0.0, 300.0) as u32;
    }

    pub fn telemetry(&self) -> Message {
        telemetry_line(&self.state)
    }

    /// Advances the clock; returns a status message whenever a telemetry
    /// period has elapsed.
    pub fn advance(&mut self, ms: u64) -> Option<Message> {
        self.state.uptime_ms += ms;
        let due = match self.last_telemetry_ms {
            None => true,
            Some(t) => self.state.uptime_ms >= t + self.cfg.telemetry_period_ms,
        };
        if due {
            self.last_telemetry_ms = Some(self.state.uptime_ms);
            Some(self.telemetry())
        } else {
            None
        }
    }
}

/// Status message for the current state.
pub fn telemetry_line(s: &McuState) -> Message {
    Message::Status {
        millivolts: (s.battery_avg * 1000.0).round().max(0.0) as u32,
        ticks_l: s.tick_count_l.min(u32::MAX as u64) as u32,
        ticks_r: s.tick_count_r.min(u32::MAX as u64) as u32,
        sonar_cm: s.sonar_last,
    }
}

/// Tally of a fuzzing run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FuzzReport {
    pub lines: u64,
    pub accepted: u64,
    pub rejected: u64,
    /// Parser panics caught while feeding the board.
    pub crashes: u64,
    /// Accepted lines whose re-encoding differs from the input.
    pub roundtrip_failures: u64,
    /// Rejected lines that still changed the board state.
    pub state_leaks: u64,
}

impl FuzzReport {
    pub fn is_clean(&self) -> bool {
        self.crashes == 0 && self.roundtrip_failures == 0 && self.state_leaks == 0
    }
}

const FUZZ_ALPHABET: &[u8] = b"csi,-+0123456789\n \r\t";

/// One fuzz input: raw bytes, grammar-biased noise, or a mutated valid line.
pub fn fuzz_line(rng: &mut ChaCha8Rng) -> Vec<u8> {
    match rng.gen_range(0..3) {
        0 => {
            let n = rng.gen_range(0..80);
            (0..n).map(|_| rng.gen()).collect()
        }
        1 => {
            let n = rng.gen_range(0..24);
            let mut v: Vec<u8> = (0..n).map(|_| FUZZ_ALPHABET[rng.gen_range(0..FUZZ_ALPHABET.len())]).collect();
            if rng.gen_bool(0.8) {
                v.push(b'\n');
            }
            v
        }
        _ => {
            let m = match rng.gen_range(0..3) {
                0 => Message::Control {
                    left: rng.gen_range(-255..=255),
                    right: rng.gen_range(-255..=255),
                },
                1 => Message::Indicator {
                    left: rng.gen(),
                    right: rng.gen(),
                },
                _ => Message::Status {
                    millivolts: rng.gen(),
                    ticks_l: rng.gen(),
                    ticks_r: rng.gen(),
                    sonar_cm: rng.gen(),
                },
            };
            let mut v = m.to_line();
            for _ in 0..rng.gen_range(0..4) {
                let i = rng.gen_range(0..=v.len());
                match rng.gen_range(0..3) {
                    0 if i < v.len() => {
                        v.remove(i);
                    }
                    1 => v.insert(i, FUZZ_ALPHABET[rng.gen_range(0..FUZZ_ALPHABET.len())]),
                    _ if i < v.len() => v[i] = rng.gen(),
                    _ => {}
                }
            }
            v
        }
    }
}

/// Feeds `lines` fuzzed lines to a fresh board.
pub fn fuzz(lines: u64, seed: u64) -> FuzzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mcu = Mcu::default();
    let mut report = FuzzReport::default();
    for _ in 0..lines {
        let line = fuzz_line(&mut rng);
        let before = mcu.state.clone();
        report.lines += 1;
        match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| mcu.receive(&line))) {
            Err(_) => report.crashes += 1,
            Ok(Ok(m)) => {
                report.accepted += 1;
                if m.to_line() != line {
                    report.roundtrip_failures += 1;
                }
            }
            Ok(Err(_)) => {
                report.rejected += 1;
                if mcu.state != before {
                    report.state_leaks += 1;
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_examples() {
        assert_eq!(parse_line(b"c,128,-64\n"), Ok(Message::Control { left: 128, right: -64 }));
        assert_eq!(parse_line(b"i,1,0\n"), Ok(Message::Indicator { left: true, right: false }));
        assert_eq!(parse_line(b"c,300,0\n"), Err(ProtocolError::OutOfRange(1)));
        assert_eq!(parse_line(b"c,1,2"), Err(ProtocolError::Unterminated));
        assert!(parse_line(b"c,01,2\n").is_err());
        assert!(parse_line(b"c,-0,2\n").is_err());
        assert!(parse_line(b"c,+1,2\n").is_err());
        assert!(parse_line(b"x,1,2\n").is_err());
        assert!(parse_line(b"c,1\n").is_err());
        assert!(parse_line(b"i,2,0\n").is_err());
        assert!(parse_line(b"s,1,2,3\n").is_err());
        assert!(parse_line(b"s,4294967296,0,0,0\n").is_err());
        let long = [b"s,".as_slice(), &[b'1'; 70], b"\n"].concat();
        assert!(matches!(parse_line(&long), Err(ProtocolError::Overlong(_))));
    }

    #[test]
    fn pwm_examples() {
        assert_eq!(action_to_pwm(Action { left: 1.0, right: 1.0 }), (255, 255));
        assert_eq!(action_to_pwm(Action { left: 0.0, right: 0.0 }), (0, 0));
        assert_eq!(action_to_pwm(Action { left: 0.5, right: -0.5 }), (128, -128));
        assert_eq!(action_to_pwm(Action { left: 3.0, right: -3.0 }), (255, -255));
    }

    #[test]
    fn odometry_examples() {
        let mut m = Mcu::default();
        m.tick_odometry(TAU, TAU).unwrap();
        assert_eq!(m.state.tick_count_l, 20);
        let mut m = Mcu::default();
        // 0.2 m circumference, 5 revolutions = 1 m
        for _ in 0..5 {
            m.tick_odometry(TAU, 0.0).unwrap();
        }
        assert_eq!(m.state.tick_count_l, 100);
        let mut m = Mcu::default();
        let half = TAU / 20.0 / 2.0;
        m.tick_odometry(half, 0.0).unwrap();
        assert_eq!(m.state.tick_count_l, 0);
        m.tick_odometry(half, 0.0).unwrap();
        assert_eq!(m.state.tick_count_l, 1);
        assert!(m.tick_odometry(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn battery_examples() {
        let mut m = Mcu::default();
        assert_eq!(m.adc_to_volts(1023), 15.0);
        let reading = 757; // 757/1023*15 = 11.0997...
        let target = m.adc_to_volts(reading);
        for _ in 0..100 {
            m.update_battery(reading).unwrap();
        }
        assert!((m.state.battery_avg - target).abs() < 1e-3);
        assert!((target - 11.10).abs() < 1e-3);
        assert!(m.update_battery(1024).is_err());
        let mut m = Mcu::new(McuConfig {
            ema_alpha: 1.0,
            ..Default::default()
        });
        m.update_battery(300).unwrap();
        m.update_battery(500).unwrap();
        assert_eq!(m.state.battery_avg, m.adc_to_volts(500));
    }

    #[test]
    fn telemetry_examples() {
        let mut m = Mcu::default();
        assert_eq!(m.telemetry().to_string(), "s,0,0,0,300");
        m.state.battery_avg = 11.1;
        m.state.tick_count_l = 120;
        m.state.tick_count_r = 118;
        m.state.sonar_last = 85;
        let line = m.telemetry().to_line();
        assert_eq!(line, b"s,11100,120,118,85\n");
        assert_eq!(parse_line(&line), Ok(m.telemetry()));
    }

    #[test]
    fn telemetry_period() {
        let mut m = Mcu::default();
        assert!(m.advance(0).is_some());
        assert!(m.advance(25).is_none());
        assert!(m.advance(25).is_some());
        assert!(m.advance(49).is_none());
        assert!(m.advance(1).is_some());
    }

    #[test]
    fn malformed_input_leaves_state() {
        let mut m = Mcu::default();
        m.receive(b"c,10,20\n").unwrap();
        let before = m.clone();
        assert!(m.receive(b"c,999,0\n").is_err());
        assert_eq!(m, before);
    }
}
