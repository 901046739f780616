//! Browser demo: one shielded session on a generated grid, driven by the
//! same JSON messages the session server accepts.

use std::sync::Arc;

use stars::eval::Prepared;
use stars::factorybot::{generate_instance, Category, SolvedInstance, DEFAULT_SOFTENING};
use stars::session::{ClientMessage, Reply, Session};
use stars::shield::ShieldParams;
use wasm_bindgen::prelude::*;

pub struct Demo {
    session: Session,
}

impl Demo {
    pub fn create(size: usize, category: &str, seed: u64, gamma: f64, theta: f64) -> Result<Demo, String> {
        let category: Category = category.parse().map_err(|e| format!("{e}"))?;
        let inst = generate_instance(size, category, seed).map_err(|e| e.to_string())?;
        let solved = SolvedInstance::new(format!("{category}-{seed}"), inst, DEFAULT_SOFTENING).map_err(|e| e.to_string())?;
        let prep = Prepared::new(solved).map_err(|e| e.to_string())?;
        let session = Session::new("demo", Arc::new(prep), ShieldParams::new(gamma, theta), seed, false)
            .map_err(|e| e.to_string())?;
        Ok(Demo { session })
    }

    /// Answers one protocol message with a JSON reply.
    pub fn handle_json(&mut self, msg: &str) -> String {
        let reply = match serde_json::from_str::<ClientMessage>(msg) {
            Ok(m) => self.session.handle(m),
            Err(e) => Reply::error("bad_request", e.to_string()),
        };
        serde_json::to_string(&reply).expect("replies serialize")
    }
}

#[wasm_bindgen]
pub struct WebDemo(Demo);

#[wasm_bindgen]
impl WebDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, category: &str, seed: u32, gamma: f64, theta: f64) -> Result<WebDemo, JsValue> {
        Demo::create(size, category, seed as u64, gamma, theta)
            .map(WebDemo)
            .map_err(|e| JsValue::from_str(&e))
    }

    pub fn handle(&mut self, msg: &str) -> String {
        self.0.handle_json(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::{json, Value};

    fn send(d: &mut Demo, v: Value) -> Value {
        serde_json::from_str(&d.handle_json(&v.to_string())).unwrap()
    }

    fn demo() -> Demo {
        Demo::create(6, "far", 3, 0.1, 0.01).unwrap()
    }

    #[test]
    fn steps_fill_the_heatmap() {
        let mut d = demo();
        let s = send(&mut d, json!({"type": "step", "n": 500}));
        assert_eq!(s["type"], "snapshot");
        let total: u64 = s["heatmap"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|r| r.as_array().unwrap())
            .map(|c| c.as_u64().unwrap())
            .sum();
        assert_eq!(total, 501);
    }

    #[test]
    fn slider_sets_gamma() {
        let mut d = demo();
        let s = send(&mut d, json!({"type": "set_params", "gamma": 0.7}));
        assert_eq!(s["params"]["gamma"], 0.7);
    }

    #[test]
    fn click_adds_an_objective_and_walls_are_refused() {
        let mut d = demo();
        let s = send(&mut d, json!({"type": "get_snapshot"}));
        let walls: Vec<[u64; 2]> = serde_json::from_value(s["grid"]["walls"].clone()).unwrap();
        let size = s["grid"]["size"].as_u64().unwrap();
        let free = (0..size)
            .flat_map(|y| (0..size).map(move |x| [x, y]))
            .find(|c| !walls.contains(c))
            .unwrap();
        let s = send(&mut d, json!({"type": "add_objective", "buchi": [free]}));
        assert_eq!(s["objectives"].as_array().unwrap().len(), 2);
        if let Some(w) = walls.first() {
            let r = send(&mut d, json!({"type": "add_objective", "buchi": [w]}));
            assert_eq!(r["type"], "error");
        }
    }

    #[test]
    fn malformed_messages_get_an_error() {
        let mut d = demo();
        let r: Value = serde_json::from_str(&d.handle_json("{\"type\":\"warp\"}")).unwrap();
        assert_eq!(r["code"], "bad_request");
    }

    #[test]
    fn unknown_category_is_rejected() {
        assert!(Demo::create(6, "middle", 1, 0.1, 0.01).is_err());
    }
}
