pub mod curate;
pub mod deid;
pub mod embed;
pub mod resize;
