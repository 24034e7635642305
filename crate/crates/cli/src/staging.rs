use std::path::Path;

use fgstformer::{Error, Result};

/// Build a directory's contents in a sibling temporary directory and move it
/// into place only if `fill` succeeds.
pub fn staged_dir(out: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if out.exists() && (!out.is_dir() || std::fs::read_dir(out)?.next().is_some()) {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} exists and is not an empty directory", out.display()),
        )));
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent)?;
    let tmp = tempfile::Builder::new()
        .prefix(".fgst-staging-")
        .tempdir_in(parent)?;
    fill(tmp.path())?;
    if out.exists() {
        std::fs::remove_dir(out)?;
    }
    let staged = tmp.keep();
    if let Err(e) = std::fs::rename(&staged, out) {
        let _ = std::fs::remove_dir_all(&staged);
        return Err(e.into());
    }
    Ok(())
}
