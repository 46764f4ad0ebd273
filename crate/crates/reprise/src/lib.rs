//! File formats, trace replay, the socket service and the CLI around
//! `reprise-core`.

pub mod binary;
pub mod config;
pub mod corpus;
pub mod records;
pub mod report;
pub mod server;
pub mod setup;
pub mod snapshot;
pub mod timing;
pub mod trace;
pub mod wav;
