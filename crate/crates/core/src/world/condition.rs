//! Weather x illumination profiles and their per-sensor degradation tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Weather {
    Clear,
    Drizzle,
    Rainy,
    Storm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Illumination {
    Day,
    Sunset,
    Night,
    Dark,
}

impl Weather {
    pub const ALL: [Weather; 4] = [Weather::Clear, Weather::Drizzle, Weather::Rainy, Weather::Storm];

    fn rank(self) -> usize {
        self as usize
    }
}

impl Illumination {
    pub const ALL: [Illumination; 4] = [Illumination::Day, Illumination::Sunset, Illumination::Night, Illumination::Dark];

    fn rank(self) -> usize {
        self as usize
    }
}

/// A named condition such as `ClearDay` or `StormDark`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConditionName {
    pub weather: Weather,
    pub illumination: Illumination,
}

impl ConditionName {
    pub const fn new(weather: Weather, illumination: Illumination) -> Self {
        ConditionName { weather, illumination }
    }

    pub const CLEAR_DAY: ConditionName = ConditionName::new(Weather::Clear, Illumination::Day);
    pub const STORM_DARK: ConditionName = ConditionName::new(Weather::Storm, Illumination::Dark);

    pub fn all() -> impl Iterator<Item = ConditionName> {
        Weather::ALL
            .into_iter()
            .flat_map(|w| Illumination::ALL.into_iter().map(move |i| ConditionName::new(w, i)))
    }

    /// The nine weather/illumination combinations used for data collection.
    pub fn training_set() -> Vec<ConditionName> {
        [Weather::Clear, Weather::Drizzle, Weather::Rainy]
            .into_iter()
            .flat_map(|w| {
                [Illumination::Day, Illumination::Sunset, Illumination::Night]
                    .into_iter()
                    .map(move |i| ConditionName::new(w, i))
            })
            .collect()
    }
}

impl fmt::Display for ConditionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}{:?}", self.weather, self.illumination)
    }
}

impl FromStr for ConditionName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConditionName::all()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown condition {s:?}"))
    }
}

impl TryFrom<String> for ConditionName {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<ConditionName> for String {
    fn from(c: ConditionName) -> String {
        c.to_string()
    }
}

const WEATHER_CONTRAST: [f64; 4] = [1.0, 0.9, 0.75, 0.55];
const LIGHT_CONTRAST: [f64; 4] = [1.0, 0.75, 0.4, 0.15];
const WEATHER_NOISE: [f64; 4] = [0.0, 0.02, 0.05, 0.10];
const LIGHT_NOISE: [f64; 4] = [0.0, 0.01, 0.03, 0.06];
const LIDAR_DROPOUT: [f64; 4] = [0.0, 0.03, 0.06, 0.10];
const LIDAR_JITTER: [f64; 4] = [0.0, 0.02, 0.04, 0.08];
const RADAR_NOISE: [f64; 4] = [0.0, 0.01, 0.02, 0.04];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionProfile {
    pub name: ConditionName,
    /// Std-dev of additive camera noise, intensity units.
    pub cam_noise_sigma: f64,
    /// Multiplicative intensity scale in (0, 1].
    pub cam_contrast: f64,
    pub lidar_dropout: f64,
    /// Std-dev of lidar range noise, meters.
    pub lidar_range_jitter: f64,
    /// Std-dev of radar relative-speed noise, m/s.
    pub radar_noise: f64,
}

impl ConditionProfile {
    pub fn of(name: ConditionName) -> Self {
        let w = name.weather.rank();
        let l = name.illumination.rank();
        ConditionProfile {
            name,
            cam_noise_sigma: WEATHER_NOISE[w] + LIGHT_NOISE[l],
            cam_contrast: WEATHER_CONTRAST[w] * LIGHT_CONTRAST[l],
            lidar_dropout: LIDAR_DROPOUT[w],
            lidar_range_jitter: LIDAR_JITTER[w],
            radar_noise: RADAR_NOISE[w],
        }
    }

    /// Scalar degradation per sensor as (camera, lidar, radar).
    pub fn sensor_degradation(&self) -> [f64; 3] {
        [
            self.cam_noise_sigma + (1.0 - self.cam_contrast),
            self.lidar_dropout + self.lidar_range_jitter,
            self.radar_noise,
        ]
    }
}

impl From<ConditionName> for ConditionProfile {
    fn from(n: ConditionName) -> Self {
        ConditionProfile::of(n)
    }
}
