//! Core of an Object-as-a-Service platform.

pub mod class;
pub mod dht;
pub mod invoke;
pub mod platform;
pub mod runtime;
pub mod store;
