pub mod gradcheck;
pub mod pipeline;
