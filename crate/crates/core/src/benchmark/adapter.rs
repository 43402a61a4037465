//! External codec executables described as data.
//!
//! An adapter file holds one `[section]` per codec with flat `key = value`
//! lines:
//!
//! ```text
//! [jpeg]
//! encode = python3 {config_dir}/pillow_jpeg.py encode {input} {output} {q}
//! decode = python3 {config_dir}/pillow_jpeg.py decode {input} {output}
//! qmin = 1
//! qmax = 95
//! pixfmt = rgb8
//! ```
//!
//! Templates are split with POSIX shell rules and placeholders are filled per
//! argument, so substituted paths never need quoting. Recognized
//! placeholders: `{input}`, `{output}`, `{q}`, `{width}`, `{height}` and
//! `{config_dir}`.

use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};
use crate::image_io;
use crate::tensor::Tensor;

/// Default per-invocation limit.
pub const DEFAULT_TIMEOUT_SECS: u64 = 120;
/// Environment variable overriding where adapter temp directories live.
pub const TMPDIR_ENV: &str = "NZ_TMPDIR";

/// Intermediate pixel format exchanged with the executable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PixelFormat {
    /// An 8-bit RGB PNG (or PPM, by `input_ext`).
    Rgb8,
    /// Raw planar 8-bit Y, Cb, Cr planes at full resolution, BT.601 full range.
    Yuv444_8,
}

impl FromStr for PixelFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb8" => Ok(PixelFormat::Rgb8),
            "yuv444-8" | "yuv444p" => Ok(PixelFormat::Yuv444_8),
            _ => Err(Error::input(format!("unknown pixfmt `{s}` (expected rgb8 or yuv444-8)"))),
        }
    }
}

impl fmt::Display for PixelFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PixelFormat::Rgb8 => "rgb8",
            PixelFormat::Yuv444_8 => "yuv444-8",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecAdapter {
    pub name: String,
    pub encode: String,
    pub decode: String,
    /// First grid point. May exceed `qmax` for codecs whose quality knob runs
    /// backwards (e.g. a quantizer); the grid is then walked downwards.
    pub qmin: f64,
    pub qmax: f64,
    pub qstep: f64,
    pub pixfmt: PixelFormat,
    /// Extension of the uncompressed files handed to / read back from the codec.
    pub input_ext: String,
    /// Extension of the compressed file.
    pub output_ext: String,
    pub timeout: Duration,
    /// Directory substituted for `{config_dir}`.
    pub config_dir: PathBuf,
    /// Parent of the per-run temp directories; `NZ_TMPDIR` or the system
    /// default when unset.
    pub temp_root: Option<PathBuf>,
}

impl CodecAdapter {
    pub fn new(name: &str, encode: &str, decode: &str, qmin: f64, qmax: f64) -> Self {
        CodecAdapter {
            name: name.to_string(),
            encode: encode.to_string(),
            decode: decode.to_string(),
            qmin,
            qmax,
            qstep: 1.0,
            pixfmt: PixelFormat::Rgb8,
            input_ext: "png".into(),
            output_ext: "bin".into(),
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_SECS),
            config_dir: PathBuf::from("."),
            temp_root: None,
        }
    }

    /// The quality grid from `qmin` towards `qmax` in steps of `qstep`.
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.qmax - self.qmin).abs() / self.qstep).floor() as usize + 1;
        let dir = if self.qmax >= self.qmin { 1.0 } else { -1.0 };
        (0..n).map(|i| self.qmin + dir * self.qstep * i as f64).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.encode.trim().is_empty() || self.decode.trim().is_empty() {
            return Err(Error::input(format!("adapter `{}` needs name, encode and decode", self.name)));
        }
        if !(self.qmin.is_finite() && self.qmax.is_finite() && self.qstep > 0.0) {
            return Err(Error::input(format!("adapter `{}` has an empty quality range", self.name)));
        }
        for t in [&self.encode, &self.decode] {
            let args = shlex::split(t).ok_or_else(|| Error::input(format!("unbalanced quotes in `{t}`")))?;
            if args.is_empty() {
                return Err(Error::input(format!("adapter `{}` has an empty command", self.name)));
            }
        }
        Ok(())
    }

    /// The executables named by both templates, resolved on `PATH`.
    pub fn check_executables(&self) -> Result<()> {
        for t in [&self.encode, &self.decode] {
            let args = shlex::split(t).unwrap_or_default();
            let Some(program) = args.first() else { continue };
            let program = fill(program, &self.placeholders(Path::new(""), Path::new(""), 0.0, 0, 0))?;
            if which::which(&program).is_err() {
                return Err(Error::MissingExecutable { name: program });
            }
        }
        Ok(())
    }

    fn placeholders(&self, input: &Path, output: &Path, q: f64, w: usize, h: usize) -> Vec<(&'static str, String)> {
        vec![
            ("input", input.display().to_string()),
            ("output", output.display().to_string()),
            ("q", format_quality(q)),
            ("width", w.to_string()),
            ("height", h.to_string()),
            ("config_dir", self.config_dir.display().to_string()),
        ]
    }

    /// The argument vector for a template with all placeholders filled.
    pub fn command_line(&self, template: &str, input: &Path, output: &Path, q: f64, w: usize, h: usize) -> Result<Vec<String>> {
        let vars = self.placeholders(input, output, q, w, h);
        shlex::split(template)
            .ok_or_else(|| Error::input(format!("unbalanced quotes in `{template}`")))?
            .iter()
            .map(|a| fill(a, &vars))
            .collect()
    }

    /// Encodes and decodes `x` at quality `q` inside a fresh temp directory,
    /// which is removed on return. Gives the compressed size and the decoded image.
    pub fn run(&self, x: &Tensor<f32>, q: f64) -> Result<CodecRun> {
        let dir = temp_dir(self.temp_root.as_deref())?;
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let src = dir.path().join(format!("source.{}", self.input_ext));
        let enc = dir.path().join(format!("encoded.{}", self.output_ext));
        let dec = dir.path().join(format!("decoded.{}", self.input_ext));
        self.write_input(&src, x)?;

        let started = std::time::Instant::now();
        self.exec(&self.command_line(&self.encode, &src, &enc, q, w, h)?, dir.path())?;
        let enc_seconds = started.elapsed().as_secs_f64();
        let bytes = std::fs::metadata(&enc).map_err(|e| Error::io(&enc, e))?.len();

        let started = std::time::Instant::now();
        self.exec(&self.command_line(&self.decode, &enc, &dec, q, w, h)?, dir.path())?;
        let dec_seconds = started.elapsed().as_secs_f64();
        let decoded = self.read_output(&dec, w, h)?;
        if decoded.shape() != x.shape() {
            return Err(Error::CodecRun {
                command: self.decode.clone(),
                status: "0".into(),
                output: format!("decoded image is {:?}, expected {:?}", decoded.shape(), x.shape()),
            });
        }
        Ok(CodecRun {
            bytes,
            decoded,
            enc_seconds,
            dec_seconds,
        })
    }

    fn write_input(&self, path: &Path, x: &Tensor<f32>) -> Result<()> {
        match self.pixfmt {
            PixelFormat::Rgb8 => image_io::write_image(path, x),
            PixelFormat::Yuv444_8 => std::fs::write(path, rgb_to_yuv444(x)).map_err(|e| Error::io(path, e)),
        }
    }

    fn read_output(&self, path: &Path, w: usize, h: usize) -> Result<Tensor<f32>> {
        match self.pixfmt {
            PixelFormat::Rgb8 => image_io::read_image(path),
            PixelFormat::Yuv444_8 => {
                let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
                yuv444_to_rgb(&raw, w, h)
            }
        }
    }

    fn exec(&self, argv: &[String], cwd: &Path) -> Result<()> {
        let display = shlex::try_join(argv.iter().map(String::as_str)).unwrap_or_else(|_| argv.join(" "));
        let out_path = cwd.join("codec-output.log");
        let log = File::create(&out_path).map_err(|e| Error::io(&out_path, e))?;
        let log_err = log.try_clone().map_err(|e| Error::io(&out_path, e))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .current_dir(cwd)
            .stdin(Stdio::null())
            .stdout(log)
            .stderr(log_err)
            .spawn()
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingExecutable { name: argv[0].clone() },
                _ => Error::CodecRun {
                    command: display.clone(),
                    status: "spawn failed".into(),
                    output: e.to_string(),
                },
            })?;
        let status = match child.wait_timeout(self.timeout).map_err(|e| Error::io(&argv[0], e))? {
            Some(s) => s,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Timeout {
                    command: display,
                    seconds: self.timeout.as_secs(),
                });
            }
        };
        if !status.success() {
            let output = std::fs::read_to_string(&out_path).unwrap_or_default();
            return Err(Error::CodecRun {
                command: display,
                status: status.to_string(),
                output: output.trim().to_string(),
            });
        }
        Ok(())
    }
}

/// Result of one encode/decode round trip through an external codec.
#[derive(Debug)]
pub struct CodecRun {
    pub bytes: u64,
    pub decoded: Tensor<f32>,
    pub enc_seconds: f64,
    pub dec_seconds: f64,
}

/// Integral qualities print without a fractional part.
pub fn format_quality(q: f64) -> String {
    if q.fract() == 0.0 && q.abs() < 1e15 {
        format!("{}", q as i64)
    } else {
        format!("{q}")
    }
}

fn fill(arg: &str, vars: &[(&'static str, String)]) -> Result<String> {
    let mut s = arg.to_string();
    for (k, v) in vars {
        s = s.replace(&format!("{{{k}}}"), v);
    }
    if let Some(start) = s.find('{') {
        if let Some(len) = s[start..].find('}') {
            let name = &s[start + 1..start + len];
            if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::input(format!("unresolved placeholder `{{{name}}}` in `{arg}`")));
            }
        }
    }
    Ok(s)
}

fn temp_dir(root: Option<&Path>) -> Result<tempfile::TempDir> {
    let builder = tempfile::Builder::new().prefix("nzc-codec-").to_owned();
    match root.map(Path::to_path_buf).or_else(|| std::env::var_os(TMPDIR_ENV).map(PathBuf::from)) {
        Some(root) => {
            builder.tempdir_in(&root).map_err(|e| Error::io(root, e))
        }
        None => builder.tempdir().map_err(|e| Error::io(std::env::temp_dir(), e)),
    }
}

/// Full-range BT.601 RGB to planar Y, Cb, Cr bytes.
pub fn rgb_to_yuv444(x: &Tensor<f32>) -> Vec<u8> {
    let plane = x.shape()[2] * x.shape()[3];
    let d = x.data();
    let mut out = vec![0u8; 3 * plane];
    for i in 0..plane {
        let (r, g, b) = (d[i] as f64 * 255.0, d[plane + i] as f64 * 255.0, d[2 * plane + i] as f64 * 255.0);
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        let cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
        let cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
        for (c, v) in [y, cb, cr].into_iter().enumerate() {
            out[c * plane + i] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Inverse of [`rgb_to_yuv444`], rounding RGB to 8 bits.
pub fn yuv444_to_rgb(raw: &[u8], w: usize, h: usize) -> Result<Tensor<f32>> {
    let plane = w * h;
    if raw.len() != 3 * plane {
        return Err(Error::Format(format!(
            "raw yuv444 file has {} bytes, expected {} for {w}x{h}",
            raw.len(),
            3 * plane
        )));
    }
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        let (y, cb, cr) = (raw[i] as f64, raw[plane + i] as f64 - 128.0, raw[2 * plane + i] as f64 - 128.0);
        let rgb = [y + 1.402 * cr, y - 0.344136 * cb - 0.714136 * cr, y + 1.772 * cb];
        for (c, v) in rgb.into_iter().enumerate() {
            data[c * plane + i] = (v.round().clamp(0.0, 255.0) / 255.0) as f32;
        }
    }
    Tensor::new(vec![1, 3, h, w], data)
}

/// Parses an adapter file. Relative `{config_dir}` resolves to `config_dir`.
pub fn parse_adapters(text: &str, config_dir: &Path) -> Result<Vec<CodecAdapter>> {
    let mut sections: Vec<(String, Vec<(usize, String, String)>)> = vec![];
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sections.push((name.trim().to_string(), vec![]));
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::input(format!("adapter file line {}: expected key = value", no + 1)))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| Error::input(format!("adapter file line {}: key outside a [section]", no + 1)))?;
        section.1.push((no + 1, k.trim().to_string(), v.trim().to_string()));
    }
    let mut out: Vec<CodecAdapter> = vec![];
    for (section, pairs) in sections {
        let mut a = CodecAdapter::new(&section, "", "", 0.0, 0.0);
        a.config_dir = config_dir.to_path_buf();
        let mut seen_q = (false, false);
        let mut ext_set = false;
        for (no, k, v) in pairs {
            let num = |v: &str| -> Result<f64> {
                v.parse().map_err(|_| Error::input(format!("adapter file line {no}: bad number `{v}` for {k}")))
            };
            match k.as_str() {
                "name" => a.name = v,
                "encode" => a.encode = v,
                "decode" => a.decode = v,
                "qmin" => (a.qmin, seen_q.0) = (num(&v)?, true),
                "qmax" => (a.qmax, seen_q.1) = (num(&v)?, true),
                "qstep" => a.qstep = num(&v)?,
                "pixfmt" => a.pixfmt = v.parse()?,
                "input_ext" => (a.input_ext, ext_set) = (v, true),
                "output_ext" => a.output_ext = v,
                "timeout" => a.timeout = Duration::from_secs_f64(num(&v)?),
                other => return Err(Error::input(format!("adapter file line {no}: unknown key `{other}`"))),
            }
        }
        if !ext_set && a.pixfmt == PixelFormat::Yuv444_8 {
            a.input_ext = "yuv".into();
        }
        if !(seen_q.0 && seen_q.1) {
            return Err(Error::input(format!("adapter `{}` needs qmin and qmax", a.name)));
        }
        a.validate()?;
        if out.iter().any(|o| o.name == a.name) {
            return Err(Error::input(format!("duplicate adapter `{}`", a.name)));
        }
        out.push(a);
    }
    Ok(out)
}

/// Loads the adapter called `name` from an adapter file.
pub fn load_adapter(path: &Path, name: &str) -> Result<CodecAdapter> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    let all = parse_adapters(&text, &dir)?;
    let names: Vec<String> = all.iter().map(|a| a.name.clone()).collect();
    all.into_iter()
        .find(|a| a.name == name)
        .ok_or_else(|| Error::input(format!("no adapter `{name}` in {} (available: {})", path.display(), names.join(", "))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::photo_like;

    const FILE: &str = "
# comment
[cp]
encode = cp {input} {output}
decode = cp {input} {output}
qmin = 1
qmax = 10

[x265]
encode = x265 --input {input} --input-res {width}x{height} --qp {q} -o {output}
decode = dec {input} {output}
qmin = 51
qmax = 0
qstep = 3
pixfmt = yuv444-8
";

    #[test]
    fn parses_sections() {
        let a = parse_adapters(FILE, Path::new("/cfg")).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].grid().len(), 10);
        assert_eq!(a[1].pixfmt, PixelFormat::Yuv444_8);
        assert_eq!(a[1].input_ext, "yuv");
        let g = a[1].grid();
        assert_eq!((g[0], g[1], *g.last().unwrap(), g.len()), (51.0, 48.0, 0.0, 18));
        let argv = a[1]
            .command_line(&a[1].encode, Path::new("/t/a b.yuv"), Path::new("/t/o"), 27.0, 64, 48)
            .unwrap();
        assert_eq!(argv, ["x265", "--input", "/t/a b.yuv", "--input-res", "64x48", "--qp", "27", "-o", "/t/o"]);
    }

    #[test]
    fn rejects_bad_files() {
        for bad in [
            "encode = x",
            "[a]\nencode = e\ndecode = d\nqmin = 1",
            "[a]\nencode = e\ndecode = d\nqmin = 1\nqmax = 2\nfoo = 1",
            "[a]\nencode = 'e\ndecode = d\nqmin = 1\nqmax = 2",
            "[a]\nencode = e\ndecode = d\nqmin = 1\nqmax = 2\npixfmt = yuv420",
        ] {
            assert!(matches!(parse_adapters(bad, Path::new(".")), Err(Error::Input(_))), "{bad}");
        }
        let a = CodecAdapter::new("t", "enc {inptu}", "dec", 1.0, 2.0);
        assert!(matches!(
            a.command_line(&a.encode, Path::new("i"), Path::new("o"), 1.0, 1, 1),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn yuv_round_trip_is_close() {
        let x = photo_like(16, 16, 4);
        let back = yuv444_to_rgb(&rgb_to_yuv444(&x), 16, 16).unwrap();
        let worst = x.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(worst <= 3.0 / 255.0, "{worst}");
    }

    #[test]
    fn missing_executable_is_named() {
        let a = CodecAdapter::new("nope", "definitely-not-a-codec-xyz {input} {output}", "cp {input} {output}", 1.0, 2.0);
        match a.check_executables() {
            Err(Error::MissingExecutable { name }) => assert_eq!(name, "definitely-not-a-codec-xyz"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(a.run(&photo_like(64, 64, 0), 1.0), Err(Error::MissingExecutable { .. })));
    }

    #[test]
    fn runs_identity_codec_and_cleans_up() {
        let root = tempfile::tempdir().unwrap();
        let x = photo_like(64, 64, 1);
        let in_root = |mut a: CodecAdapter| {
            a.temp_root = Some(root.path().to_path_buf());
            a
        };
        let a = in_root(CodecAdapter::new("cp", "cp {input} {output}", "cp {input} {output}", 1.0, 1.0));
        let run = a.run(&x, 1.0).unwrap();
        assert!(run.bytes > 0);
        assert_eq!(image_io::to_rgb8(&run.decoded), image_io::to_rgb8(&x));

        let failing = in_root(CodecAdapter::new("f", "sh -c 'echo boom >&2; exit 3'", "cp {input} {output}", 1.0, 1.0));
        match failing.run(&x, 1.0) {
            Err(Error::CodecRun { output, .. }) => assert_eq!(output, "boom"),
            other => panic!("{other:?}"),
        }
        let mut slow = in_root(CodecAdapter::new("s", "sleep 5", "cp {input} {output}", 1.0, 1.0));
        slow.timeout = Duration::from_millis(200);
        assert!(matches!(slow.run(&x, 1.0), Err(Error::Timeout { .. })));
        assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);
    }
}
