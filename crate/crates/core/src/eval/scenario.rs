use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::HISTORY_LEN;
use crate::error::{Error, Result};
use crate::temporal::HistoryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    Annual,
    Biennial,
}

/// Which past visits the model may see at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ScenarioMask {
    duration: u8,
    frequency: Frequency,
}

impl ScenarioMask {
    pub fn new(duration: u8, frequency: Frequency) -> Result<Self> {
        if duration as usize >= HISTORY_LEN {
            return Err(Error::config(format!("history duration {duration} exceeds 4 years")));
        }
        if frequency == Frequency::Biennial && !duration.is_multiple_of(2) {
            return Err(Error::config(format!("biennial scenario needs an even duration, got {duration}")));
        }
        // With no past visits the frequency is meaningless; keep one spelling.
        let frequency = if duration == 0 { Frequency::Annual } else { frequency };
        Ok(Self { duration, frequency })
    }

    pub fn annual(duration: u8) -> Result<Self> {
        Self::new(duration, Frequency::Annual)
    }

    pub fn biennial(duration: u8) -> Result<Self> {
        Self::new(duration, Frequency::Biennial)
    }

    pub fn duration(&self) -> u8 {
        self.duration
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    /// Visible year offsets, oldest first.
    pub fn offsets(&self) -> Vec<i32> {
        let d = i32::from(self.duration);
        let step = match self.frequency {
            Frequency::Annual => 1,
            Frequency::Biennial => 2,
        };
        (-d..=0).filter(|o| (o + d) % step == 0).collect()
    }

    pub fn visible(&self) -> HistoryMask {
        let mut present = [false; HISTORY_LEN];
        for o in self.offsets() {
            present[(o + HISTORY_LEN as i32 - 1) as usize] = true;
        }
        HistoryMask::new(present).expect("offset 0 always visible")
    }

    /// The scenarios of the headline comparison: 0, 1*–4* and 4+.
    pub fn table_set() -> Vec<ScenarioMask> {
        let mut v: Vec<_> = (0..=4).map(|d| Self::annual(d).unwrap()).collect();
        v.push(Self::biennial(4).unwrap());
        v
    }
}

impl fmt::Display for ScenarioMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.duration, self.frequency) {
            (0, _) => f.write_str("0"),
            (d, Frequency::Annual) => write!(f, "{d}*"),
            (d, Frequency::Biennial) => write!(f, "{d}+"),
        }
    }
}

/// Parses `<duration>` optionally followed by `*` (annual) or `+` (biennial).
/// A bare number is annual.
impl FromStr for ScenarioMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (num, freq) = match s.as_bytes().last() {
            Some(b'*') => (&s[..s.len() - 1], Frequency::Annual),
            Some(b'+') => (&s[..s.len() - 1], Frequency::Biennial),
            _ => (s, Frequency::Annual),
        };
        let d: u8 = num
            .parse()
            .map_err(|_| Error::config(format!("bad scenario {s:?}; expected e.g. 0, 2*, 4+")))?;
        Self::new(d, freq)
    }
}

impl TryFrom<String> for ScenarioMask {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScenarioMask> for String {
    fn from(s: ScenarioMask) -> String {
        s.to_string()
    }
}

/// Comma-separated scenario list.
pub fn parse_scenarios(s: &str) -> Result<Vec<ScenarioMask>> {
    let v = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()?;
    if v.is_empty() {
        return Err(Error::config("no scenarios given"));
    }
    Ok(v)
}
