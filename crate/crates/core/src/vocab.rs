//! Entity classes, relationship labels and property keys of the search and
//! rescue domain.

pub const DRONE: &str = "Drone";
pub const BATTERY: &str = "Battery";
pub const PERSON: &str = "Person";
pub const STATUS: &str = "Status";
pub const HOME_STATION: &str = "HomeStation";

pub const LOOKING_FOR: &str = "looking for";
pub const LOCATED: &str = "located";
pub const IS: &str = "is";
pub const AT: &str = "at";
pub const OUTSIDE: &str = "outside";
pub const HIGH: &str = "High";
pub const MEDIUM: &str = "Medium";
pub const LOW: &str = "Low";
pub const CLOSE: &str = "close";

pub const POSE: &str = "pose";
pub const VOLTAGE: &str = "voltage";
pub const LOCATION: &str = "location";

pub const STATUS_VALUES: [&str; 3] = ["Disarmed", "Flying", "Landed"];
