//! Dataset loading, checkpoint serialization, and the synthetic-scene
//! generator.

pub mod checkpoint;
pub mod dataset;
pub mod generate;
pub mod image;

pub use checkpoint::{
    load_checkpoint, load_weights_into, save_checkpoint, save_weights, OptimizerSnapshot,
    TrainCheckpoint, CHECKPOINT_VERSION,
};
pub use dataset::{
    load_dataset, save_cameras_json, save_points, CameraFrame, CamerasJson, Dataset, FrameJson,
    PointSample,
};
pub use generate::{generate_synthetic, Recipe, SynthConfig};
pub use image::{
    read_image, read_pfm_gray, read_pfm_rgb, read_png, read_ppm, srgb_decode, srgb_encode,
    write_image, write_pfm_gray, write_pfm_rgb, write_png, write_ppm, ImageBuf, ImageFormat,
};
