//! File formats: OBJ and binary PLY meshes, PNG and PFM images, raw face-index
//! grids and camera JSON. Writers go through a temporary sibling file and a
//! rename so an interrupted write never leaves a truncated file.

mod camera;
mod image;
mod mesh;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use camera::{
    read_camera, read_normalization, read_rig, write_camera, write_normalization, write_rig, CameraRecord,
};
pub use image::{
    decode_pfm, encode_pfm, read_face_map, read_pfm, read_png, write_face_map, write_instance_png, write_pfm,
    write_png, write_render,
};
pub use mesh::{parse_obj, parse_ply, read_mesh, to_obj, to_ply, write_mesh};

use crate::error::{GeomError, Result};

/// Write `bytes` to `path` atomically, creating parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| GeomError::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| GeomError::InvalidParameter(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(GeomError::io(path, e));
    }
    Ok(())
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| GeomError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_creates_directories_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/file.txt");
        write_atomic(&path, b"hello").unwrap();
        write_atomic(&path, b"again").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"again");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }
}
