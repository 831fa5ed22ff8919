pub mod access;
pub mod binning;
pub mod cli;
pub mod eval;
pub mod numeric;
pub mod protocol;
pub mod rates;
pub mod scenario;
pub mod source;
pub mod typicality;
