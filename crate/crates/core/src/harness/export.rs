use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::episode::EpisodeResult;

pub const STEP_CSV_HEADER: &str = "t,p_x,p_y,p_z,v_x,v_y,v_z,q_w,q_x,q_y,q_z,w_x,w_y,w_z,T,tau_x,tau_y,tau_z,ep_norm,e_norm,s_aggr,fhat_0,fhat_1,fhat_2,fhat_3,fhat_4,fhat_5,gate,rho,clamped";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-step CSV; gate and rho are empty when no oracle was active.
pub fn steps_csv(r: &EpisodeResult) -> String {
    let mut out = String::with_capacity(r.len() * 400);
    out.push_str(STEP_CSV_HEADER);
    out.push('\n');
    for k in 0..r.len() {
        let x = &r.states[k];
        let u = &r.inputs[k];
        let q = x.rot.wxyz();
        let e = &r.errors[k];
        let mut fields: Vec<String> = vec![r.time[k].to_string()];
        fields.extend(x.pos.iter().chain(x.vel.iter()).map(|c| c.to_string()));
        fields.extend(q.iter().map(|c| c.to_string()));
        fields.extend(x.omega.iter().map(|c| c.to_string()));
        fields.push(u.thrust.to_string());
        fields.extend(u.torque.iter().map(|c| c.to_string()));
        fields.push(e.pos.norm().to_string());
        fields.push(e.norm().to_string());
        fields.push(r.aggressiveness[k].to_string());
        fields.extend(r.fhat[k].iter().map(|c| c.to_string()));
        fields.push(opt(r.gate[k]));
        fields.push(opt(r.rho[k]));
        fields.push(u8::from(r.clamped[k]).to_string());
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

pub fn write_steps_csv(r: &EpisodeResult, path: &Path) -> Result<()> {
    std::fs::write(path, steps_csv(r)).map_err(|e| Error::io(path, e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
