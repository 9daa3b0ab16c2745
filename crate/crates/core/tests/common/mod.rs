#![allow(dead_code)]
pub mod physics;
