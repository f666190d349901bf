//! Cameras, depth frames, multi-view fusion and the training-input
//! sampler, plus capture I/O and a synthetic capture generator.

mod camera;
mod capture;
mod layout;
pub mod netpbm;
pub mod synth;

pub use camera::{backproject_pixel, look_at, project, CameraIntrinsics, Pose, ORTHONORMAL_TOL};
pub use capture::{
    backproject, fuse, resample, sample_frames, sample_training_input, Capture, Observation,
};
pub use layout::{list_captures, load_capture, load_dataset, save_capture};
pub use synth::{
    gen_synthetic, gen_synthetic_with, random_shape, render, split_counts, synth_capture, synth_indexed,
    view_ring, Superellipsoid, SynthConfig,
};
