//! JSON-lines feature files.
//!
//! The first line is a header `{"format":"i2s-features","version":1,"d_im":..,"d_w":..}`
//! (optionally with `"split"`). Every following line is one item. Lines
//! carrying `user_id` are user posts, grouped by user in file order; lines
//! without it are pool candidates, optionally tagged with the `owner` whose
//! held-out activity they are.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, ItemFeatures, PoolItem, Split, UserRecord};
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "i2s-features";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    d_im: usize,
    d_w: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    user_id: Option<String>,
    item_id: String,
    image: Vec<f64>,
    hashtag: Vec<Vec<f64>>,
    title: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    owner: Option<String>,
}

/// Parses a feature file. Item dimensions are validated against the header;
/// an empty file or missing header is an error, an empty body is not.
pub fn read_features<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => {
                return Err(Error::Format {
                    line: 1,
                    message: "missing header".into(),
                })
            }
            Some((i, line)) => {
                let line = line.map_err(|e| Error::Format { line: i + 1, message: e.to_string() })?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| Error::Format {
                    line: i + 1,
                    message: format!("bad header: {e}"),
                })?;
            }
        }
    };
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(Error::Format {
            line: 1,
            message: format!(
                "unsupported format {} v{} (expected {FORMAT_NAME} v{FORMAT_VERSION})",
                header.format, header.version
            ),
        });
    }
    let mut data = Dataset::new(header.d_im, header.d_w, header.split);
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Format { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Format {
            line: line_no,
            message: e.to_string(),
        })?;
        let item = ItemFeatures {
            item_id: rec.item_id,
            image: rec.image,
            hashtag: rec.hashtag,
            title: rec.title,
        };
        item.validate(data.d_im, data.d_w)?;
        match rec.user_id {
            Some(user_id) => {
                if rec.owner.is_some() {
                    return Err(Error::Format {
                        line: line_no,
                        message: "a user post cannot carry an owner".into(),
                    });
                }
                match data.users.iter_mut().rev().find(|u| u.user_id == user_id) {
                    Some(u) => u.posts.push(item),
                    None => data.users.push(UserRecord { user_id, posts: vec![item] }),
                }
            }
            None => data.pool.push(PoolItem { owner: rec.owner, item }),
        }
    }
    data.validate()?;
    Ok(data)
}

/// Writes the canonical form: header, user posts grouped by user, then pool.
pub fn write_features<W: Write>(data: &Dataset, mut out: W) -> Result<()> {
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        d_im: data.d_im,
        d_w: data.d_w,
        split: data.split,
    };
    let wr = |e: std::io::Error| Error::io("<feature output>", e);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(wr)?;
    let mut emit = |user_id: Option<&str>, owner: Option<&str>, item: &ItemFeatures| -> Result<()> {
        // Borrowing record to avoid copying feature vectors.
        #[derive(Serialize)]
        struct RecordRef<'a> {
            #[serde(skip_serializing_if = "Option::is_none")]
            user_id: Option<&'a str>,
            item_id: &'a str,
            image: &'a [f64],
            hashtag: &'a [Vec<f64>],
            title: &'a [Vec<f64>],
            #[serde(skip_serializing_if = "Option::is_none")]
            owner: Option<&'a str>,
        }
        serde_json::to_writer(
            &mut out,
            &RecordRef {
                user_id,
                item_id: &item.item_id,
                image: &item.image,
                hashtag: &item.hashtag,
                title: &item.title,
                owner,
            },
        )?;
        out.write_all(b"\n").map_err(wr)
    };
    for user in &data.users {
        for post in &user.posts {
            emit(Some(&user.user_id), None, post)?;
        }
    }
    for p in &data.pool {
        emit(None, p.owner.as_deref(), &p.item)?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Loads a file holding at least one user (pool lines, if any, are kept).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let data = read_features(open(path.as_ref())?)?;
    if data.users.is_empty() {
        return Err(Error::Empty("no users".into()));
    }
    Ok(data)
}

/// Loads a pool-only file.
pub fn load_pool(path: impl AsRef<Path>) -> Result<Dataset> {
    let data = read_features(open(path.as_ref())?)?;
    if !data.users.is_empty() {
        return Err(Error::Config(format!(
            "{}: pool file contains user posts",
            path.as_ref().display()
        )));
    }
    if data.pool.is_empty() {
        return Err(Error::Empty("pool is empty".into()));
    }
    Ok(data)
}

pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_features(data, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes pool items (no users) with the given dimensions.
pub fn save_pool(pool: &[PoolItem], d_im: usize, d_w: usize, path: impl AsRef<Path>) -> Result<()> {
    let mut data = Dataset::new(d_im, d_w, None);
    data.pool = pool.to_vec();
    save_dataset(&data, path)
}
