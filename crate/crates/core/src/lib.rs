pub mod error;
pub mod fem;
pub mod geometry;
pub mod linalg;
pub mod par;
pub mod material;
pub mod truth;
pub mod eim;
pub mod offline;
pub mod online;
pub mod store;
