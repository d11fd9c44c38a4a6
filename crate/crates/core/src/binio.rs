//! Little-endian helpers shared by the binary artifact formats.
//!
//! Every artifact starts with an 8-byte magic whose last byte is the format
//! version digit (`CMVCOOC1` is version `1` of the co-occurrence format).

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub(crate) type Magic = [u8; 8];

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Maps a short read to `Format` and keeps every other failure as I/O.
pub(crate) fn read_err(path: &Path) -> impl Fn(io::Error) -> Error + '_ {
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Format(format!("{}: truncated file", path.display()))
        } else {
            Error::io(path, e)
        }
    }
}

pub(crate) fn write_err(path: &Path) -> impl Fn(io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &Magic, path: &Path) -> Result<()> {
    let mut got = [0u8; 8];
    r.read_exact(&mut got).map_err(read_err(path))?;
    if &got != magic {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

/// Fails unless the reader is exhausted.
pub(crate) fn expect_eof<R: Read>(r: &mut R, path: &Path) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe).map_err(read_err(path))? {
        0 => Ok(()),
        _ => Err(Error::Format(format!(
            "{}: trailing bytes after payload",
            path.display()
        ))),
    }
}

pub(crate) trait ReadLe: Read {
    fn u8_le(&mut self) -> io::Result<u8> {
        self.read_u8()
    }
    fn u32_le(&mut self) -> io::Result<u32> {
        self.read_u32::<LittleEndian>()
    }
    fn u64_le(&mut self) -> io::Result<u64> {
        self.read_u64::<LittleEndian>()
    }
    fn f32_le(&mut self) -> io::Result<f32> {
        self.read_f32::<LittleEndian>()
    }
    fn f64_le(&mut self) -> io::Result<f64> {
        self.read_f64::<LittleEndian>()
    }
}

impl<R: Read + ?Sized> ReadLe for R {}

pub(crate) trait WriteLe: Write {
    fn put_u8(&mut self, v: u8) -> io::Result<()> {
        self.write_u8(v)
    }
    fn put_u32(&mut self, v: u32) -> io::Result<()> {
        self.write_u32::<LittleEndian>(v)
    }
    fn put_u64(&mut self, v: u64) -> io::Result<()> {
        self.write_u64::<LittleEndian>(v)
    }
    fn put_f32(&mut self, v: f32) -> io::Result<()> {
        self.write_f32::<LittleEndian>(v)
    }
    fn put_f64(&mut self, v: f64) -> io::Result<()> {
        self.write_f64::<LittleEndian>(v)
    }
}

impl<W: Write + ?Sized> WriteLe for W {}

pub(crate) fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::BadParameter(format!("{what} {v} exceeds u32 range")))
}
