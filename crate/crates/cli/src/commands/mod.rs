pub mod coupled;
pub mod energy;
pub mod rates;
pub mod selftest;
pub mod simulate;
