//! File formats: PGM images, CSV manifests and reports, JSON configuration.

pub mod config;
pub mod manifest;
pub mod pgm;
pub mod report;
