//! Data model, parsers, stores and rules for assessing Wi-Fi access points.

pub mod assessment;
pub mod canonical;
pub mod db;
pub mod history;
pub mod ingest;
pub mod journal;
pub mod model;
pub mod oui;
pub mod probe;
pub mod recommender;
pub mod risk;
pub mod transport;
pub mod wigle;
