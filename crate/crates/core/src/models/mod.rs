//! Teacher and student CNN architectures, parameters, forward/backward
//! passes, FLOPs accounting and the binary model file format.

mod flops;
mod io;
mod model;
mod spec;

pub use flops::{count_flops, layer_flops, FlopsReport, LayerFlops};
pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use model::{init_weights, ForwardTrace, LayerParams, Model, ModelGrads};
pub use spec::{
    build_student_spec, build_teacher_spec, LayerSpec, ModelSpec, STUDENT_WIDTHS,
    TEACHER_DEFAULT_DEPTH, TEACHER_MIN_DEPTH,
};
