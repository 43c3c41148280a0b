//! Addresses, prefixes and the fixed-length byte keys fed to the hash family.
//!
//! Both address families share one representation: a `u128` value plus a
//! runtime [`Width`]. IPv4 values occupy the low 32 bits.

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};

use crate::error::{Error, Result};

/// Address width in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Width {
    V4,
    V6,
}

impl Width {
    pub const fn bits(self) -> u8 {
        match self {
            Width::V4 => 32,
            Width::V6 => 128,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            32 => Ok(Width::V4),
            128 => Ok(Width::V6),
            other => Err(Error::invalid(format!(
                "address width must be 32 or 128, got {other}"
            ))),
        }
    }

    /// Length of an [`EncodedKey`] for this width.
    pub const fn key_len(self) -> usize {
        self.bits() as usize / 8 + 1
    }

    /// All-ones value for this width.
    pub const fn full_mask(self) -> u128 {
        match self {
            Width::V4 => u32::MAX as u128,
            Width::V6 => u128::MAX,
        }
    }
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Width::V4 => f.write_str("ipv4"),
            Width::V6 => f.write_str("ipv6"),
        }
    }
}

const fn build_masks<const N: usize>(width: u32) -> [u128; N] {
    let mut out = [0u128; N];
    let full = if width == 128 {
        u128::MAX
    } else {
        (1u128 << width) - 1
    };
    let mut plen = 1;
    while plen < N {
        let host = width - plen as u32;
        let host_mask = if host == 0 { 0 } else { (1u128 << host) - 1 };
        out[plen] = full & !host_mask;
        plen += 1;
    }
    out
}

static MASKS_V4: [u128; 33] = build_masks::<33>(32);
static MASKS_V6: [u128; 129] = build_masks::<129>(128);

/// Netmask keeping the `plen` most significant bits of a `width`-bit value.
///
/// `plen` must not exceed the width.
#[inline]
pub fn netmask(width: Width, plen: u8) -> u128 {
    match width {
        Width::V4 => MASKS_V4[plen as usize],
        Width::V6 => MASKS_V6[plen as usize],
    }
}

/// A fixed-width address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address {
    width: Width,
    value: u128,
}

impl Address {
    pub fn new(width: Width, value: u128) -> Result<Self> {
        if value & !width.full_mask() != 0 {
            return Err(Error::invalid(format!(
                "value {value:#x} does not fit in {} bits",
                width.bits()
            )));
        }
        Ok(Address { width, value })
    }

    pub const fn v4(value: u32) -> Self {
        Address {
            width: Width::V4,
            value: value as u128,
        }
    }

    pub const fn v6(value: u128) -> Self {
        Address {
            width: Width::V6,
            value,
        }
    }

    pub fn width(&self) -> Width {
        self.width
    }

    pub fn value(&self) -> u128 {
        self.value
    }

    /// Zero all but the `plen` most significant bits.
    #[inline]
    pub(crate) fn masked(self, plen: u8) -> Address {
        Address {
            width: self.width,
            value: self.value & netmask(self.width, plen),
        }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.width {
            Width::V4 => Ipv4Addr::from(self.value as u32).fmt(f),
            Width::V6 => Ipv6Addr::from(self.value).fmt(f),
        }
    }
}

impl From<Ipv4Addr> for Address {
    fn from(a: Ipv4Addr) -> Self {
        Address::v4(a.into())
    }
}

impl From<Ipv6Addr> for Address {
    fn from(a: Ipv6Addr) -> Self {
        Address::v6(a.into())
    }
}

/// Parse dotted-quad or colon-hex text. The width follows the notation.
pub fn parse_address(text: &str) -> Result<Address> {
    let text = text.trim();
    if text.contains(':') {
        text.parse::<Ipv6Addr>()
            .map(Address::from)
            .map_err(|e| Error::parse(format!("bad IPv6 address {text:?}: {e}")))
    } else {
        text.parse::<Ipv4Addr>()
            .map(Address::from)
            .map_err(|e| Error::parse(format!("bad IPv4 address {text:?}: {e}")))
    }
}

/// Return `addr` with all but its `plen` most significant bits cleared.
pub fn mask_address(addr: Address, plen: u8) -> Result<Address> {
    if plen > addr.width.bits() {
        return Err(Error::invalid(format!(
            "prefix length {plen} exceeds address width {}",
            addr.width.bits()
        )));
    }
    Ok(addr.masked(plen))
}

/// A canonical (masked) prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prefix {
    addr: Address,
    len: u8,
}

impl Prefix {
    /// Build a prefix from an already-masked address.
    pub fn new(addr: Address, len: u8) -> Result<Self> {
        let masked = mask_address(addr, len)?;
        if masked != addr {
            return Err(Error::invalid(format!(
                "{addr}/{len} has bits set below the prefix length"
            )));
        }
        Ok(Prefix { addr, len })
    }

    /// Build a prefix, clearing any host bits.
    pub fn from_masked(addr: Address, len: u8) -> Result<Self> {
        Ok(Prefix {
            addr: mask_address(addr, len)?,
            len,
        })
    }

    pub fn addr(&self) -> Address {
        self.addr
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn width(&self) -> Width {
        self.addr.width
    }

    pub fn is_default(&self) -> bool {
        self.len == 0
    }

    /// True if `a` falls inside this prefix.
    pub fn contains(&self, a: Address) -> bool {
        a.width == self.addr.width && a.masked(self.len) == self.addr
    }

    pub fn key(&self) -> EncodedKey {
        EncodedKey::from_masked(self.addr.width, self.addr.value, self.len)
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.len)
    }
}

const KEY_CAP: usize = 17;

/// Masked address in network byte order followed by one byte holding the
/// prefix length.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncodedKey {
    buf: [u8; KEY_CAP],
    len: u8,
}

impl EncodedKey {
    #[inline]
    pub(crate) fn from_masked(width: Width, value: u128, plen: u8) -> Self {
        let mut buf = [0u8; KEY_CAP];
        let len = match width {
            Width::V4 => {
                buf[..4].copy_from_slice(&(value as u32).to_be_bytes());
                buf[4] = plen;
                5
            }
            Width::V6 => {
                buf[..16].copy_from_slice(&value.to_be_bytes());
                buf[16] = plen;
                17
            }
        };
        EncodedKey { buf, len }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf[..self.len as usize]
    }

    /// Inverse of [`encode_key`].
    pub fn decode(&self) -> (Address, u8) {
        let bytes = self.as_bytes();
        let (addr, plen) = bytes.split_at(bytes.len() - 1);
        let addr = match addr.len() {
            4 => Address::v4(u32::from_be_bytes(addr.try_into().unwrap())),
            _ => Address::v6(u128::from_be_bytes(addr.try_into().unwrap())),
        };
        (addr, plen[0])
    }
}

impl AsRef<[u8]> for EncodedKey {
    fn as_ref(&self) -> &[u8] {
        self.as_bytes()
    }
}

impl fmt::Debug for EncodedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.as_bytes() {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Encode an already-masked `(addr, plen)` pair.
pub fn encode_key(addr: Address, plen: u8) -> Result<EncodedKey> {
    Ok(Prefix::new(addr, plen)?.key())
}

/// Result of [`parse_prefix`]: the canonical prefix plus whether the input
/// already was canonical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedPrefix {
    pub prefix: Prefix,
    pub canonical: bool,
}

/// Parse `addr/len` text. Host bits are cleared; `canonical` reports whether
/// any were set.
pub fn parse_prefix(text: &str, width: Width) -> Result<ParsedPrefix> {
    let text = text.trim();
    let (addr_text, len_text) = text
        .split_once('/')
        .ok_or_else(|| Error::parse(format!("missing '/len' in {text:?}")))?;
    let addr = parse_address(addr_text)?;
    if addr.width != width {
        return Err(Error::parse(format!(
            "{text:?} is not an {width} prefix"
        )));
    }
    let len: u8 = len_text
        .parse()
        .map_err(|_| Error::parse(format!("bad prefix length in {text:?}")))?;
    if len > width.bits() {
        return Err(Error::parse(format!(
            "prefix length {len} out of range for {width}"
        )));
    }
    let prefix = Prefix::from_masked(addr, len)?;
    Ok(ParsedPrefix {
        canonical: prefix.addr == addr,
        prefix,
    })
}
