//! Write-temp-then-rename helpers.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Unique sibling path for staging writes next to `target`.
pub fn temp_sibling(target: &Path) -> PathBuf {
    let n = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let name = target
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    target.with_file_name(format!(".tmp-{name}-{}-{n}", std::process::id()))
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Moves a fully written staging directory into place, replacing whatever
/// was at `target`.
pub fn publish_dir(staging: &Path, target: &Path) -> io::Result<()> {
    if target.exists() {
        let old = temp_sibling(target);
        fs::rename(target, &old)?;
        fs::rename(staging, target)?;
        fs::remove_dir_all(&old)?;
        Ok(())
    } else {
        fs::rename(staging, target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn publish_replaces_directory() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("t");
        for content in ["first", "second"] {
            let staging = temp_sibling(&target);
            fs::create_dir(&staging).unwrap();
            fs::write(staging.join("f"), content).unwrap();
            publish_dir(&staging, &target).unwrap();
        }
        assert_eq!(fs::read_to_string(target.join("f")).unwrap(), "second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
