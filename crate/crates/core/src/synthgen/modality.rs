use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The five sensor products of the fleet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Optical,
    Sar,
    Thermal,
    Phenology,
    Toposoil,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Optical,
        Modality::Sar,
        Modality::Thermal,
        Modality::Phenology,
        Modality::Toposoil,
    ];

    pub fn channels(self) -> usize {
        match self {
            Modality::Optical => 10,
            Modality::Sar => 2,
            Modality::Thermal => 2,
            Modality::Phenology => 40,
            Modality::Toposoil => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Optical => "optical",
            Modality::Sar => "sar",
            Modality::Thermal => "thermal",
            Modality::Phenology => "phenology",
            Modality::Toposoil => "toposoil",
        }
    }

    pub fn index(self) -> usize {
        Modality::ALL.iter().position(|&m| m == self).expect("listed")
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownModality(s.to_string()))
    }
}

/// An embedding source: one specialist or the all-channel generalist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Specialist(Modality),
    Generalist,
}

impl Source {
    /// Five specialists followed by the generalist.
    pub const ALL: [Source; 6] = [
        Source::Specialist(Modality::Optical),
        Source::Specialist(Modality::Sar),
        Source::Specialist(Modality::Thermal),
        Source::Specialist(Modality::Phenology),
        Source::Specialist(Modality::Toposoil),
        Source::Generalist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Source::Specialist(m) => m.name(),
            Source::Generalist => "generalist",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Source::Specialist(m) => m.channels(),
            Source::Generalist => Modality::ALL.iter().map(|m| m.channels()).sum(),
        }
    }

    pub fn modality(self) -> Option<Modality> {
        match self {
            Source::Specialist(m) => Some(m),
            Source::Generalist => None,
        }
    }
}

impl From<Modality> for Source {
    fn from(m: Modality) -> Self {
        Source::Specialist(m)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "generalist" {
            Ok(Source::Generalist)
        } else {
            s.parse().map(Source::Specialist)
        }
    }
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
