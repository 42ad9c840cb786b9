//! The closed set of scenario classes the toolkit knows about. The first ten
//! are the common urban situations every run trains on; the last four are the
//! rare long-tail situations that arrive one stage at a time.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioClass {
    BehindLongVehicle,
    FollowingLaneWithLead,
    HighLateralAcceleration,
    LowMagnitudeSpeed,
    StartingLeftTurn,
    StartingRightTurn,
    StartingStraightTrafficLight,
    StationaryInTraffic,
    StoppingWithLead,
    WaitingForPedestrianToCross,
    HighMagnitudeSpeed,
    NearMultipleVehicles,
    ChangingLane,
    TraversingPickupDropoff,
}

use ScenarioClass::*;

impl ScenarioClass {
    pub const ALL: [ScenarioClass; 14] = [
        BehindLongVehicle,
        FollowingLaneWithLead,
        HighLateralAcceleration,
        LowMagnitudeSpeed,
        StartingLeftTurn,
        StartingRightTurn,
        StartingStraightTrafficLight,
        StationaryInTraffic,
        StoppingWithLead,
        WaitingForPedestrianToCross,
        HighMagnitudeSpeed,
        NearMultipleVehicles,
        ChangingLane,
        TraversingPickupDropoff,
    ];

    pub const COMMON: [ScenarioClass; 10] = [
        BehindLongVehicle,
        FollowingLaneWithLead,
        HighLateralAcceleration,
        LowMagnitudeSpeed,
        StartingLeftTurn,
        StartingRightTurn,
        StartingStraightTrafficLight,
        StationaryInTraffic,
        StoppingWithLead,
        WaitingForPedestrianToCross,
    ];

    /// Long-tail classes in the order their adaptation stages run.
    pub const LONG_TAIL: [ScenarioClass; 4] = [
        HighMagnitudeSpeed,
        NearMultipleVehicles,
        ChangingLane,
        TraversingPickupDropoff,
    ];

    pub fn id(self) -> u8 {
        Self::ALL.iter().position(|&c| c == self).unwrap() as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn is_long_tail(self) -> bool {
        self.id() >= 10
    }

    pub fn name(self) -> &'static str {
        match self {
            BehindLongVehicle => "behind_long_vehicle",
            FollowingLaneWithLead => "following_lane_with_lead",
            HighLateralAcceleration => "high_lateral_acceleration",
            LowMagnitudeSpeed => "low_magnitude_speed",
            StartingLeftTurn => "starting_left_turn",
            StartingRightTurn => "starting_right_turn",
            StartingStraightTrafficLight => "starting_straight_traffic_light",
            StationaryInTraffic => "stationary_in_traffic",
            StoppingWithLead => "stopping_with_lead",
            WaitingForPedestrianToCross => "waiting_for_pedestrian_to_cross",
            HighMagnitudeSpeed => "high_magnitude_speed",
            NearMultipleVehicles => "near_multiple_vehicles",
            ChangingLane => "changing_lane",
            TraversingPickupDropoff => "traversing_pickup_dropoff",
        }
    }
}

impl fmt::Display for ScenarioClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown scenario class `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_dense_and_stable() {
        for (i, c) in ScenarioClass::ALL.iter().enumerate() {
            assert_eq!(c.id() as usize, i);
            assert_eq!(ScenarioClass::from_id(i as u8), Some(*c));
        }
        assert_eq!(ScenarioClass::from_id(14), None);
    }

    #[test]
    fn long_tail_split() {
        assert_eq!(ScenarioClass::COMMON.len(), 10);
        assert_eq!(ScenarioClass::LONG_TAIL.len(), 4);
        assert!(ScenarioClass::COMMON.iter().all(|c| !c.is_long_tail()));
        assert!(ScenarioClass::LONG_TAIL.iter().all(|c| c.is_long_tail()));
    }

    #[test]
    fn names_roundtrip() {
        for c in ScenarioClass::ALL {
            assert_eq!(c.name().parse::<ScenarioClass>().unwrap(), c);
        }
        assert!("no_such_class".parse::<ScenarioClass>().is_err());
    }
}
