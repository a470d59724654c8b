//! Checksummed file transfer over HTTP.
//!
//! `PUT /files/{relpath}` streams a file into the server root. The body is
//! hashed while it is written to a scratch file; only a matching digest is
//! renamed into place, so the destination is either absent or complete.

mod client;
mod server;

pub use client::{TransferClient, TransferError, TransferRequest, DEFAULT_CHUNK_SIZE};
pub use server::{
    router, TransferConfig, TransferConfigError, EXPECTED_SHA256_HEADER, TEMP_DIR, TRANSFER_ID_HEADER,
};
