//! CRC-64/XZ (ECMA-182 polynomial, reflected, init and xorout all ones).
//! A CRC of this width detects every error burst of 64 bits or fewer, so any
//! single corrupted byte always changes the value.

use crc::{Crc, Digest, Table, CRC_64_XZ};

static CRC64: Crc<u64, Table<16>> = Crc::<u64, Table<16>>::new(&CRC_64_XZ);

pub struct Checksum(Digest<'static, u64, Table<16>>);

impl Checksum {
    pub fn new() -> Self {
        Self(CRC64.digest())
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.0.update(bytes);
    }

    pub fn finish(self) -> u64 {
        self.0.finalize()
    }
}

impl Default for Checksum {
    fn default() -> Self {
        Self::new()
    }
}

pub fn checksum(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}
