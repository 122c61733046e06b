pub mod binding;
pub mod bmff;
pub mod cbor;
pub mod manifest;
pub mod pipeline;
pub mod recovery;
pub mod validator;
pub mod watermark;

#[cfg(test)]
pub(crate) mod testutil;
