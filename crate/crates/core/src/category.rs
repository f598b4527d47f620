//! The fourteen road-user categories and their parent classes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Car,
    Van,
    Truck,
    Trailer,
    Bus,
    Tram,
    Motorcycle,
    Bicycle,
    Scooter,
    Pedestrian,
    Stroller,
    Wheelchair,
    Animal,
    Other,
}

/// Coarse classes used when comparing against datasets with fewer categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ParentClass {
    Animal,
    Bicycle,
    Bus,
    Car,
    Motorcycle,
    Pedestrian,
    Scooter,
    Truck,
    Other,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown category '{0}'")]
pub struct UnknownCategory(pub String);

impl Category {
    pub const ALL: [Category; 14] = [
        Category::Car,
        Category::Van,
        Category::Truck,
        Category::Trailer,
        Category::Bus,
        Category::Tram,
        Category::Motorcycle,
        Category::Bicycle,
        Category::Scooter,
        Category::Pedestrian,
        Category::Stroller,
        Category::Wheelchair,
        Category::Animal,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Car => "car",
            Category::Van => "van",
            Category::Truck => "truck",
            Category::Trailer => "trailer",
            Category::Bus => "bus",
            Category::Tram => "tram",
            Category::Motorcycle => "motorcycle",
            Category::Bicycle => "bicycle",
            Category::Scooter => "scooter",
            Category::Pedestrian => "pedestrian",
            Category::Stroller => "stroller",
            Category::Wheelchair => "wheelchair",
            Category::Animal => "animal",
            Category::Other => "other",
        }
    }

    pub fn parent(self) -> ParentClass {
        match self {
            Category::Car | Category::Van => ParentClass::Car,
            Category::Truck | Category::Trailer => ParentClass::Truck,
            Category::Bus | Category::Tram => ParentClass::Bus,
            Category::Motorcycle => ParentClass::Motorcycle,
            Category::Bicycle => ParentClass::Bicycle,
            Category::Scooter => ParentClass::Scooter,
            Category::Pedestrian | Category::Stroller | Category::Wheelchair => ParentClass::Pedestrian,
            Category::Animal => ParentClass::Animal,
            Category::Other => ParentClass::Other,
        }
    }

    /// Motorised road vehicles that can perform a parking maneuver.
    pub fn is_vehicle(self) -> bool {
        matches!(
            self,
            Category::Car | Category::Van | Category::Truck | Category::Trailer | Category::Bus | Category::Motorcycle
        )
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

impl ParentClass {
    pub const ALL: [ParentClass; 9] = [
        ParentClass::Animal,
        ParentClass::Bicycle,
        ParentClass::Bus,
        ParentClass::Car,
        ParentClass::Motorcycle,
        ParentClass::Pedestrian,
        ParentClass::Scooter,
        ParentClass::Truck,
        ParentClass::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParentClass::Animal => "Animal",
            ParentClass::Bicycle => "Bicycle",
            ParentClass::Bus => "Bus",
            ParentClass::Car => "Car",
            ParentClass::Motorcycle => "Motorcycle",
            ParentClass::Pedestrian => "Pedestrian",
            ParentClass::Scooter => "Scooter",
            ParentClass::Truck => "Truck",
            ParentClass::Other => "Other",
        }
    }
}
