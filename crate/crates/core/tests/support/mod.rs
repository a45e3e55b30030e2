#![allow(dead_code)]

pub mod relation;
pub mod settlement;
pub mod vss;
