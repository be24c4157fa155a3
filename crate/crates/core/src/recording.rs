use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input channel role, in model input order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelRole {
    #[serde(rename = "EEG")]
    Eeg,
    #[serde(rename = "EOG-L")]
    EogLeft,
    #[serde(rename = "EOG-R")]
    EogRight,
    #[serde(rename = "EMG")]
    Emg,
}

impl ChannelRole {
    pub const ORDER: [ChannelRole; 4] = [ChannelRole::Eeg, ChannelRole::EogLeft, ChannelRole::EogRight, ChannelRole::Emg];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelRole::Eeg => "EEG",
            ChannelRole::EogLeft => "EOG-L",
            ChannelRole::EogRight => "EOG-R",
            ChannelRole::Emg => "EMG",
        }
    }
}

impl fmt::Display for ChannelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub role: ChannelRole,
    pub sample_rate: u32,
    /// Physical units.
    pub samples: Vec<f64>,
}

impl Channel {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Raw four-channel recording of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct PsgRecording {
    pub subject_id: String,
    pub cohort: String,
    channels: Vec<Channel>,
}

impl PsgRecording {
    /// Assemble from channels already in [`ChannelRole::ORDER`]. Channel
    /// durations may differ by at most `quantum` seconds.
    pub fn new(subject_id: impl Into<String>, cohort: impl Into<String>, channels: Vec<Channel>, quantum: f64) -> Result<Self> {
        if channels.len() != ChannelRole::ORDER.len() {
            return Err(Error::InvalidArgument(format!("need 4 channels, got {}", channels.len())));
        }
        for (c, role) in channels.iter().zip(ChannelRole::ORDER) {
            if c.role != role {
                return Err(Error::InvalidArgument(format!("channel {} where {role} expected", c.role)));
            }
            if c.sample_rate == 0 {
                return Err(Error::InvalidArgument(format!("{role} has sampling rate 0")));
            }
        }
        let durations: Vec<f64> = channels.iter().map(Channel::duration).collect();
        let spread = durations.iter().cloned().fold(f64::MIN, f64::max) - durations.iter().cloned().fold(f64::MAX, f64::min);
        if spread > quantum + 1e-9 {
            return Err(Error::InvalidArgument(format!("channel durations differ by {spread} s")));
        }
        Ok(Self { subject_id: subject_id.into(), cohort: cohort.into(), channels })
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel(&self, role: ChannelRole) -> &Channel {
        &self.channels[ChannelRole::ORDER.iter().position(|r| *r == role).unwrap()]
    }

    /// Shortest channel duration in seconds.
    pub fn duration(&self) -> f64 {
        self.channels.iter().map(Channel::duration).fold(f64::MAX, f64::min)
    }

    /// Drop everything past `seconds` on every channel.
    pub fn truncate_seconds(&mut self, seconds: usize) {
        for c in &mut self.channels {
            c.samples.truncate(seconds * c.sample_rate as usize);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(role: ChannelRole, fs: u32, n: usize) -> Channel {
        Channel { role, sample_rate: fs, samples: vec![0.0; n] }
    }

    #[test]
    fn enforces_role_order_and_duration() {
        let good = vec![
            ch(ChannelRole::Eeg, 100, 3000),
            ch(ChannelRole::EogLeft, 100, 3000),
            ch(ChannelRole::EogRight, 100, 3000),
            ch(ChannelRole::Emg, 200, 6000),
        ];
        let rec = PsgRecording::new("s1", "A", good.clone(), 1.0).unwrap();
        assert_eq!(rec.duration(), 30.0);
        let mut swapped = good.clone();
        swapped.swap(1, 2);
        assert!(PsgRecording::new("s1", "A", swapped, 1.0).is_err());
        let mut short = good;
        short[3].samples.truncate(5000);
        assert!(PsgRecording::new("s1", "A", short, 1.0).is_err());
    }
}
