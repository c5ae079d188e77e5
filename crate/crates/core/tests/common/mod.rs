#![allow(dead_code)]

pub mod brute;
pub mod instances;
pub mod networks;
pub mod random_lp;
pub mod reference_simplex;
