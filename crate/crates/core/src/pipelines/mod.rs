//! End-to-end experiment recipes.

pub mod audio;
pub mod config;
pub mod images;
pub mod io;
pub mod radio;
