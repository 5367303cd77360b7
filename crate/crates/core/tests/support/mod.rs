pub mod models;
pub mod oracle;
