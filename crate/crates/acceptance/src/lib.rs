//! Independent reference implementations used by the acceptance suite.

pub mod oracle;
