pub mod config;
pub mod csi;
pub mod dataset;
pub mod image;
pub mod metrics;
pub mod networks;
pub mod pipeline;
pub mod pose;
pub mod preprocess;
pub mod sim;
