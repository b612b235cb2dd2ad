//! Real-time simulation of the AFM approach-retract force curve, coupled to a
//! virtual force-feedback key and rendered as force, sound and a
//! potential-well display.

pub mod model;
pub mod scene;
pub mod curve;
pub mod teleop;
pub mod feeds;
pub mod session;
