//! Teacher autoencoder, student regressors and their size accounting.

mod arch;
mod checkpoint;
mod network;

pub use arch::{
    teacher_layers, StudentId, StudentModel, TeacherModel, UnknownStudent, IMAGE_SHAPE, REPRESENTATION_SIZE, REFERENCE_FLOPS,
    REFERENCE_PARAMS,
};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use network::{Layer, Network, SizeReport};

/// Builds the teacher with parameters drawn from `seed`.
pub fn build_teacher(seed: u64) -> TeacherModel {
    TeacherModel::build(seed)
}

pub fn build_student(id: StudentId, seed: u64) -> StudentModel {
    StudentModel::build(id, seed)
}
