pub mod affect;
pub mod batch;
pub mod clients;
pub mod clock;
pub mod color;
pub mod config;
pub mod extraction;
pub mod generation;
pub mod index;
pub mod model;
pub mod resources;
pub mod session;
pub mod soundscape;
