pub mod wav;
pub mod metadata;
pub mod geometry;
