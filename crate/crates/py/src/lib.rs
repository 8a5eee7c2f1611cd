//! Python bindings for the boxmotion toolkit: build and compose maneuver
//! automata, run the conformance suite, and plan/simulate scenarios.

use boxmotion::cli::{plan_scenario, policy_json, rollout, sample_starts, scenario_ma};
use boxmotion::compose::{compose_n, parallel_compose};
use boxmotion::ma::check::{check_ma_assumptions, SimCheckConfig};
use boxmotion::ma::double_integrator::build_double_integrator_ma;
use boxmotion::ma::ManeuverAutomaton;
use boxmotion::planning::chain::Algo;
use boxmotion::scenario::{parse_scenario, scenario_to_string, PlannerChoice, ScenarioDocument};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A maneuver automaton (atomic or composed).
#[pyclass]
#[derive(Clone)]
struct Automaton {
    inner: ManeuverAutomaton,
}

#[pymethods]
impl Automaton {
    /// Hold/Forward/Backward family over one axis of length `d`.
    #[staticmethod]
    fn double_integrator(d: f64, u_max: f64) -> PyResult<Self> {
        Ok(Self {
            inner: build_double_integrator_ma(d, u_max).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ManeuverAutomaton::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn compose(&self, other: &Automaton) -> PyResult<Self> {
        Ok(Self {
            inner: parallel_compose(&self.inner, &other.inner).map_err(err)?,
        })
    }

    fn compose_n(&self, k: usize) -> PyResult<Self> {
        Ok(Self {
            inner: compose_n(&self.inner, k).map_err(err)?,
        })
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn num_primitives(&self) -> usize {
        self.inner.num_primitives()
    }

    fn primitive_names(&self) -> Vec<String> {
        (0..self.inner.num_primitives())
            .map(|i| self.inner.primitive_name(&self.inner.primitive_tuple(i)))
            .collect()
    }

    /// Possible events of a primitive tuple, as offset vectors.
    fn sigma(&self, tuple: Vec<usize>) -> PyResult<Vec<Vec<i8>>> {
        Ok(self
            .inner
            .sigma_ma(&tuple)
            .map_err(err)?
            .into_iter()
            .map(|l| l.0)
            .collect())
    }

    /// Run the seven-condition conformance suite; returns
    /// `{condition: status}` with any witnesses under "witnesses".
    #[pyo3(signature = (samples = 300, seed = 0))]
    fn check(&self, py: Python<'_>, samples: usize, seed: u64) -> PyResult<PyObject> {
        let cfg = SimCheckConfig {
            samples,
            seed,
            ..Default::default()
        };
        let report = check_ma_assumptions(&self.inner, &cfg).map_err(err)?;
        let names = ["i", "ii", "iii", "iv", "v", "vi", "vii"];
        let dict = pyo3::types::PyDict::new_bound(py);
        let mut witnesses: Vec<String> = Vec::new();
        for (c, n) in report.conditions.iter().zip(names) {
            dict.set_item(n, format!("{:?}", c.status))?;
            witnesses.extend(c.witnesses.iter().cloned());
        }
        dict.set_item("all_ok", report.all_ok())?;
        dict.set_item("witnesses", witnesses)?;
        Ok(dict.into())
    }
}

/// A parsed planning scenario.
#[pyclass]
struct Scenario {
    doc: ScenarioDocument,
}

fn algo_from(doc: &ScenarioDocument, name: Option<&str>) -> PyResult<Algo> {
    let choice = match name {
        Some("ndd") => PlannerChoice::Ndd,
        Some("astar") => PlannerChoice::Astar,
        Some("greedy") => PlannerChoice::Greedy,
        Some(other) => return Err(PyValueError::new_err(format!("unknown planner '{other}'"))),
        None => doc.planner,
    };
    Ok(match choice {
        PlannerChoice::Ndd => Algo::Ndd,
        PlannerChoice::Astar => Algo::Astar,
        PlannerChoice::Greedy => Algo::Greedy,
    })
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            doc: parse_scenario(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(err)?;
        Self::parse(&text)
    }

    #[getter]
    fn name(&self) -> String {
        self.doc.name.clone()
    }

    #[getter]
    fn planner(&self) -> String {
        self.doc.planner.to_string()
    }

    fn to_json(&self) -> String {
        scenario_to_string(&self.doc)
    }

    /// The composed automaton the scenario plans over.
    fn automaton(&self) -> PyResult<Automaton> {
        Ok(Automaton {
            inner: scenario_ma(&self.doc.grid, self.doc.primitive.u_max).map_err(err)?,
        })
    }

    /// Plan and return the policy artifact as a JSON string.
    #[pyo3(signature = (algo = None, budget_states = 5_000_000))]
    fn plan(&self, algo: Option<&str>, budget_states: usize) -> PyResult<String> {
        let a = algo_from(&self.doc, algo)?;
        let (_, out) = plan_scenario(&self.doc, a, budget_states).map_err(err)?;
        Ok(policy_json(&self.doc, a, &out))
    }

    /// Plan, simulate `samples` seeded closed-loop executions, and return
    /// per-sample verdicts: `[{pass, stages_reached, events, zeno}, ...]`.
    #[pyo3(signature = (samples = 4, algo = None, budget_states = 5_000_000))]
    fn simulate(
        &self,
        py: Python<'_>,
        samples: usize,
        algo: Option<&str>,
        budget_states: usize,
    ) -> PyResult<PyObject> {
        let a = algo_from(&self.doc, algo)?;
        let (ma, out) = plan_scenario(&self.doc, a, budget_states).map_err(err)?;
        let starts = sample_starts(&self.doc, &ma, &out, samples, self.doc.seed).map_err(err)?;
        let list = pyo3::types::PyList::empty_bound(py);
        for start in starts {
            let roll = rollout(&self.doc, &ma, &out, start, &self.doc.sim).map_err(err)?;
            let d = pyo3::types::PyDict::new_bound(py);
            d.set_item("pass", roll.verdict_pass)?;
            d.set_item("stages_reached", roll.reached.clone())?;
            d.set_item("events", roll.trace.events.len())?;
            d.set_item("zeno", roll.trace.zeno)?;
            d.set_item("translation_error", roll.trace.translation_error)?;
            list.append(d)?;
        }
        Ok(list.into())
    }
}

#[pymodule]
fn boxmotion_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Automaton>()?;
    m.add_class::<Scenario>()?;
    Ok(())
}
