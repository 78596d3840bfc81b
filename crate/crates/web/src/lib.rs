//! WebAssembly bindings for the in-browser demo. Every call returns JSON.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(e: ahlm_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = Demo)]
pub struct WebDemo(demo::Demo);

#[wasm_bindgen(js_class = Demo)]
impl WebDemo {
    /// `params` is a JSON object; missing fields take the demo defaults.
    #[wasm_bindgen(constructor)]
    pub fn new(params: &str) -> Result<WebDemo, JsError> {
        let p: demo::DemoParams = if params.trim().is_empty() {
            demo::DemoParams::default()
        } else {
            serde_json::from_str(params).map_err(|e| JsError::new(&e.to_string()))?
        };
        demo::Demo::new(p).map(WebDemo).map_err(js)
    }

    pub fn params(&self) -> String {
        serde_json::to_string(self.0.params()).unwrap_or_default()
    }

    #[wasm_bindgen(js_name = compareModes)]
    pub fn compare_modes(&self) -> Result<String, JsError> {
        self.0.compare_modes().map_err(js)
    }

    #[wasm_bindgen(js_name = windowCount)]
    pub fn window_count(&self, doc: usize) -> usize {
        self.0.window_count(doc)
    }

    #[wasm_bindgen(js_name = windowScores)]
    pub fn window_scores(&self, doc: usize, index: usize) -> Result<String, JsError> {
        self.0.window_scores(doc, index).map_err(js)
    }

    pub fn grid(&self, j_values: Vec<usize>, span_values: Vec<usize>) -> Result<String, JsError> {
        self.0.grid(j_values, span_values).map_err(js)
    }
}
