//! Shared by several test binaries; each uses a different subset.
#![allow(dead_code)]

pub mod gradcheck;
pub mod gradient_suite;
pub mod variance_field;
