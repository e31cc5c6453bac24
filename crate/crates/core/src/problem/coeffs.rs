use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Dimensions, Point};
use crate::error::{Error, Result};

pub type VecFn = Arc<dyn Fn(&Point) -> DVector<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
pub type MatFn = Arc<dyn Fn(&Point) -> DMatrix<f64> + Send + Sync>;
pub type TermVecFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type TermScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type TermMatFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// The nine coefficient maps of the state/observation/cost system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Base {
    Drift,
    Sigma1,
    Sigma2,
    Obs,
    Driver,
    Terminal,
    Running,
    TerminalCost,
    InitialCost,
}

pub(crate) const ALL_FUNCTIONS: [Base; 9] = [
    Base::Drift,
    Base::Sigma1,
    Base::Sigma2,
    Base::Obs,
    Base::Driver,
    Base::Terminal,
    Base::Running,
    Base::TerminalCost,
    Base::InitialCost,
];

impl Base {
    pub(crate) fn name(self) -> &'static str {
        match self {
            Base::Drift => "b",
            Base::Sigma1 => "sigma1",
            Base::Sigma2 => "sigma2",
            Base::Obs => "h",
            Base::Driver => "f",
            Base::Terminal => "phi",
            Base::Running => "l",
            Base::TerminalCost => "Phi",
            Base::InitialCost => "gamma",
        }
    }

    pub(crate) fn output_dim(self, dims: &Dimensions) -> usize {
        match self {
            Base::Drift | Base::Sigma1 | Base::Sigma2 => dims.n,
            Base::Driver | Base::Terminal => dims.m,
            Base::Obs | Base::Running | Base::TerminalCost | Base::InitialCost => 1,
        }
    }
}

/// Argument a partial derivative is taken with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Arg {
    X,
    Y,
    Z1,
    Z2,
    U,
}

impl Arg {
    pub(crate) fn dim(self, dims: &Dimensions) -> usize {
        match self {
            Arg::X => dims.n,
            Arg::Y | Arg::Z1 | Arg::Z2 => dims.m,
            Arg::U => dims.k,
        }
    }

    pub(crate) fn slot(self, pt: &mut Point) -> &mut DVector<f64> {
        match self {
            Arg::X => &mut pt.x,
            Arg::Y => &mut pt.y,
            Arg::Z1 => &mut pt.z1,
            Arg::Z2 => &mut pt.z2,
            Arg::U => &mut pt.u,
        }
    }
}

/// Every partial derivative the maximum-principle machinery consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Partial {
    DriftX,
    DriftU,
    Sigma1X,
    Sigma1U,
    Sigma2X,
    Sigma2U,
    ObsX,
    ObsU,
    DriverX,
    DriverY,
    DriverZ1,
    DriverZ2,
    DriverU,
    TerminalX,
    RunningX,
    RunningY,
    RunningZ1,
    RunningZ2,
    RunningU,
    TerminalCostX,
    InitialCostY,
}

impl Partial {
    pub const ALL: [Partial; 21] = [
        Partial::DriftX,
        Partial::DriftU,
        Partial::Sigma1X,
        Partial::Sigma1U,
        Partial::Sigma2X,
        Partial::Sigma2U,
        Partial::ObsX,
        Partial::ObsU,
        Partial::DriverX,
        Partial::DriverY,
        Partial::DriverZ1,
        Partial::DriverZ2,
        Partial::DriverU,
        Partial::TerminalX,
        Partial::RunningX,
        Partial::RunningY,
        Partial::RunningZ1,
        Partial::RunningZ2,
        Partial::RunningU,
        Partial::TerminalCostX,
        Partial::InitialCostY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Partial::DriftX => "b_x",
            Partial::DriftU => "b_u",
            Partial::Sigma1X => "sigma1_x",
            Partial::Sigma1U => "sigma1_u",
            Partial::Sigma2X => "sigma2_x",
            Partial::Sigma2U => "sigma2_u",
            Partial::ObsX => "h_x",
            Partial::ObsU => "h_u",
            Partial::DriverX => "f_x",
            Partial::DriverY => "f_y",
            Partial::DriverZ1 => "f_z1",
            Partial::DriverZ2 => "f_z2",
            Partial::DriverU => "f_u",
            Partial::TerminalX => "phi_x",
            Partial::RunningX => "l_x",
            Partial::RunningY => "l_y",
            Partial::RunningZ1 => "l_z1",
            Partial::RunningZ2 => "l_z2",
            Partial::RunningU => "l_u",
            Partial::TerminalCostX => "Phi_x",
            Partial::InitialCostY => "gamma_y",
        }
    }

    pub(crate) fn base(self) -> Base {
        use Partial::*;
        match self {
            DriftX | DriftU => Base::Drift,
            Sigma1X | Sigma1U => Base::Sigma1,
            Sigma2X | Sigma2U => Base::Sigma2,
            ObsX | ObsU => Base::Obs,
            DriverX | DriverY | DriverZ1 | DriverZ2 | DriverU => Base::Driver,
            TerminalX => Base::Terminal,
            RunningX | RunningY | RunningZ1 | RunningZ2 | RunningU => Base::Running,
            TerminalCostX => Base::TerminalCost,
            InitialCostY => Base::InitialCost,
        }
    }

    pub(crate) fn arg(self) -> Arg {
        use Partial::*;
        match self {
            DriftX | Sigma1X | Sigma2X | ObsX | DriverX | TerminalX | RunningX | TerminalCostX => {
                Arg::X
            }
            DriverY | RunningY | InitialCostY => Arg::Y,
            DriverZ1 | RunningZ1 => Arg::Z1,
            DriverZ2 | RunningZ2 => Arg::Z2,
            DriftU | Sigma1U | Sigma2U | ObsU | DriverU | RunningU => Arg::U,
        }
    }

    /// (rows, cols) of the Jacobian; gradients of scalar maps are one row.
    /// True when the Jacobian has no entries (e.g. `l_y` with `m = 0`).
    pub fn is_empty(self, dims: &Dimensions) -> bool {
        let (r, c) = self.shape(dims);
        r * c == 0
    }

    pub fn shape(self, dims: &Dimensions) -> (usize, usize) {
        (self.base().output_dim(dims), self.arg().dim(dims))
    }
}

impl fmt::Display for Partial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// User-supplied coefficient maps and their partial derivatives.
///
/// Every map defaults to the zero map of the right shape (with zero partials).
/// Once a map is supplied, its partials must be supplied too; a supplied map
/// without a partial yields [`Error::MissingPartial`] when that partial is
/// needed. Evaluators must be pure and thread-safe.
#[derive(Clone)]
pub struct CoefficientSet {
    dims: Dimensions,
    x0: DVector<f64>,
    bound: Option<f64>,
    supplied: BTreeSet<&'static str>,

    drift: VecFn,
    drift_x: Option<MatFn>,
    drift_u: Option<MatFn>,
    sigma1: VecFn,
    sigma1_x: Option<MatFn>,
    sigma1_u: Option<MatFn>,
    sigma2: VecFn,
    sigma2_x: Option<MatFn>,
    sigma2_u: Option<MatFn>,
    obs: ScalarFn,
    obs_x: Option<VecFn>,
    obs_u: Option<VecFn>,
    driver: VecFn,
    driver_x: Option<MatFn>,
    driver_y: Option<MatFn>,
    driver_z1: Option<MatFn>,
    driver_z2: Option<MatFn>,
    driver_u: Option<MatFn>,
    terminal: TermVecFn,
    terminal_x: Option<TermMatFn>,
    running: ScalarFn,
    running_x: Option<VecFn>,
    running_y: Option<VecFn>,
    running_z1: Option<VecFn>,
    running_z2: Option<VecFn>,
    running_u: Option<VecFn>,
    terminal_cost: TermScalarFn,
    terminal_cost_x: Option<TermVecFn>,
    initial_cost: TermScalarFn,
    initial_cost_y: Option<TermVecFn>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("dims", &self.dims)
            .field("x0", &self.x0.as_slice())
            .field("supplied", &self.supplied)
            .finish_non_exhaustive()
    }
}

macro_rules! base_setter {
    ($setter:ident, $field:ident, $label:literal, ($($arg:ty),*) -> $ret:ty) => {
        #[doc = concat!("Supplies `", $label, "`.")]
        pub fn $setter(mut self, f: impl Fn($($arg),*) -> $ret + Send + Sync + 'static) -> Self {
            self.$field = Arc::new(f);
            self.supplied.insert($label);
            self
        }
    };
}

macro_rules! partial_setter {
    ($setter:ident, $field:ident, ($($arg:ty),*) -> $ret:ty) => {
        pub fn $setter(mut self, f: impl Fn($($arg),*) -> $ret + Send + Sync + 'static) -> Self {
            self.$field = Some(Arc::new(f));
            self
        }
    };
}

macro_rules! partial_getter {
    ($getter:ident, $field:ident, $partial:expr, $argty:ty, $ret:ty) => {
        pub fn $getter(&self, arg: &$argty) -> Result<$ret> {
            match &self.$field {
                Some(f) => Ok(f(arg)),
                None if self.supplied.contains($partial.base().name())
                    && !$partial.is_empty(&self.dims) =>
                {
                    Err(Error::MissingPartial($partial.name()))
                }
                None => {
                    let (r, c) = $partial.shape(&self.dims);
                    Ok(zeros_like::<$ret>(r, c))
                }
            }
        }
    };
}

trait ZeroShape {
    fn zero_shape(rows: usize, cols: usize) -> Self;
}

impl ZeroShape for DMatrix<f64> {
    fn zero_shape(rows: usize, cols: usize) -> Self {
        DMatrix::zeros(rows, cols)
    }
}

impl ZeroShape for DVector<f64> {
    // gradient of a scalar map: one row, `cols` entries
    fn zero_shape(_rows: usize, cols: usize) -> Self {
        DVector::zeros(cols)
    }
}

fn zeros_like<T: ZeroShape>(rows: usize, cols: usize) -> T {
    T::zero_shape(rows, cols)
}

impl CoefficientSet {
    /// All-zero coefficient set with initial state `x0`.
    pub fn new(dims: Dimensions, x0: DVector<f64>) -> Self {
        let (n, m) = (dims.n, dims.m);
        Self {
            dims,
            x0,
            bound: None,
            supplied: BTreeSet::new(),
            drift: Arc::new(move |_| DVector::zeros(n)),
            drift_x: None,
            drift_u: None,
            sigma1: Arc::new(move |_| DVector::zeros(n)),
            sigma1_x: None,
            sigma1_u: None,
            sigma2: Arc::new(move |_| DVector::zeros(n)),
            sigma2_x: None,
            sigma2_u: None,
            obs: Arc::new(|_| 0.0),
            obs_x: None,
            obs_u: None,
            driver: Arc::new(move |_| DVector::zeros(m)),
            driver_x: None,
            driver_y: None,
            driver_z1: None,
            driver_z2: None,
            driver_u: None,
            terminal: Arc::new(move |_| DVector::zeros(m)),
            terminal_x: None,
            running: Arc::new(|_| 0.0),
            running_x: None,
            running_y: None,
            running_z1: None,
            running_z2: None,
            running_u: None,
            terminal_cost: Arc::new(|_| 0.0),
            terminal_cost_x: None,
            initial_cost: Arc::new(|_| 0.0),
            initial_cost_y: None,
        }
    }

    pub fn dims(&self) -> &Dimensions {
        &self.dims
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    /// Declared bound `C` on `|sigma2|` and `|h|`.
    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn with_bound(mut self, c: f64) -> Self {
        self.bound = Some(c);
        self
    }

    pub fn is_supplied(&self, name: &str) -> bool {
        self.supplied.contains(name)
    }

    base_setter!(with_drift, drift, "b", (&Point) -> DVector<f64>);
    base_setter!(with_sigma1, sigma1, "sigma1", (&Point) -> DVector<f64>);
    base_setter!(with_sigma2, sigma2, "sigma2", (&Point) -> DVector<f64>);
    base_setter!(with_obs, obs, "h", (&Point) -> f64);
    base_setter!(with_driver, driver, "f", (&Point) -> DVector<f64>);
    base_setter!(with_terminal, terminal, "phi", (&DVector<f64>) -> DVector<f64>);
    base_setter!(with_running, running, "l", (&Point) -> f64);
    base_setter!(with_terminal_cost, terminal_cost, "Phi", (&DVector<f64>) -> f64);
    base_setter!(with_initial_cost, initial_cost, "gamma", (&DVector<f64>) -> f64);

    partial_setter!(with_drift_x, drift_x, (&Point) -> DMatrix<f64>);
    partial_setter!(with_drift_u, drift_u, (&Point) -> DMatrix<f64>);
    partial_setter!(with_sigma1_x, sigma1_x, (&Point) -> DMatrix<f64>);
    partial_setter!(with_sigma1_u, sigma1_u, (&Point) -> DMatrix<f64>);
    partial_setter!(with_sigma2_x, sigma2_x, (&Point) -> DMatrix<f64>);
    partial_setter!(with_sigma2_u, sigma2_u, (&Point) -> DMatrix<f64>);
    partial_setter!(with_obs_x, obs_x, (&Point) -> DVector<f64>);
    partial_setter!(with_obs_u, obs_u, (&Point) -> DVector<f64>);
    partial_setter!(with_driver_x, driver_x, (&Point) -> DMatrix<f64>);
    partial_setter!(with_driver_y, driver_y, (&Point) -> DMatrix<f64>);
    partial_setter!(with_driver_z1, driver_z1, (&Point) -> DMatrix<f64>);
    partial_setter!(with_driver_z2, driver_z2, (&Point) -> DMatrix<f64>);
    partial_setter!(with_driver_u, driver_u, (&Point) -> DMatrix<f64>);
    partial_setter!(with_terminal_x, terminal_x, (&DVector<f64>) -> DMatrix<f64>);
    partial_setter!(with_running_x, running_x, (&Point) -> DVector<f64>);
    partial_setter!(with_running_y, running_y, (&Point) -> DVector<f64>);
    partial_setter!(with_running_z1, running_z1, (&Point) -> DVector<f64>);
    partial_setter!(with_running_z2, running_z2, (&Point) -> DVector<f64>);
    partial_setter!(with_running_u, running_u, (&Point) -> DVector<f64>);
    partial_setter!(with_terminal_cost_x, terminal_cost_x, (&DVector<f64>) -> DVector<f64>);
    partial_setter!(with_initial_cost_y, initial_cost_y, (&DVector<f64>) -> DVector<f64>);

    pub fn drift(&self, pt: &Point) -> DVector<f64> {
        (self.drift)(pt)
    }
    pub fn sigma1(&self, pt: &Point) -> DVector<f64> {
        (self.sigma1)(pt)
    }
    pub fn sigma2(&self, pt: &Point) -> DVector<f64> {
        (self.sigma2)(pt)
    }
    pub fn obs(&self, pt: &Point) -> f64 {
        (self.obs)(pt)
    }
    pub fn driver(&self, pt: &Point) -> DVector<f64> {
        (self.driver)(pt)
    }
    pub fn terminal(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.terminal)(x)
    }
    pub fn running(&self, pt: &Point) -> f64 {
        (self.running)(pt)
    }
    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        (self.terminal_cost)(x)
    }
    pub fn initial_cost(&self, y: &DVector<f64>) -> f64 {
        (self.initial_cost)(y)
    }

    partial_getter!(drift_x, drift_x, Partial::DriftX, Point, DMatrix<f64>);
    partial_getter!(drift_u, drift_u, Partial::DriftU, Point, DMatrix<f64>);
    partial_getter!(sigma1_x, sigma1_x, Partial::Sigma1X, Point, DMatrix<f64>);
    partial_getter!(sigma1_u, sigma1_u, Partial::Sigma1U, Point, DMatrix<f64>);
    partial_getter!(sigma2_x, sigma2_x, Partial::Sigma2X, Point, DMatrix<f64>);
    partial_getter!(sigma2_u, sigma2_u, Partial::Sigma2U, Point, DMatrix<f64>);
    partial_getter!(obs_x, obs_x, Partial::ObsX, Point, DVector<f64>);
    partial_getter!(obs_u, obs_u, Partial::ObsU, Point, DVector<f64>);
    partial_getter!(driver_x, driver_x, Partial::DriverX, Point, DMatrix<f64>);
    partial_getter!(driver_y, driver_y, Partial::DriverY, Point, DMatrix<f64>);
    partial_getter!(driver_z1, driver_z1, Partial::DriverZ1, Point, DMatrix<f64>);
    partial_getter!(driver_z2, driver_z2, Partial::DriverZ2, Point, DMatrix<f64>);
    partial_getter!(driver_u, driver_u, Partial::DriverU, Point, DMatrix<f64>);
    partial_getter!(
        terminal_x,
        terminal_x,
        Partial::TerminalX,
        DVector<f64>,
        DMatrix<f64>
    );
    partial_getter!(running_x, running_x, Partial::RunningX, Point, DVector<f64>);
    partial_getter!(running_y, running_y, Partial::RunningY, Point, DVector<f64>);
    partial_getter!(
        running_z1,
        running_z1,
        Partial::RunningZ1,
        Point,
        DVector<f64>
    );
    partial_getter!(
        running_z2,
        running_z2,
        Partial::RunningZ2,
        Point,
        DVector<f64>
    );
    partial_getter!(running_u, running_u, Partial::RunningU, Point, DVector<f64>);
    partial_getter!(
        terminal_cost_x,
        terminal_cost_x,
        Partial::TerminalCostX,
        DVector<f64>,
        DVector<f64>
    );
    partial_getter!(
        initial_cost_y,
        initial_cost_y,
        Partial::InitialCostY,
        DVector<f64>,
        DVector<f64>
    );

    pub(crate) fn has_partial(&self, partial: Partial) -> bool {
        use Partial::*;
        let present = match partial {
            DriftX => self.drift_x.is_some(),
            DriftU => self.drift_u.is_some(),
            Sigma1X => self.sigma1_x.is_some(),
            Sigma1U => self.sigma1_u.is_some(),
            Sigma2X => self.sigma2_x.is_some(),
            Sigma2U => self.sigma2_u.is_some(),
            ObsX => self.obs_x.is_some(),
            ObsU => self.obs_u.is_some(),
            DriverX => self.driver_x.is_some(),
            DriverY => self.driver_y.is_some(),
            DriverZ1 => self.driver_z1.is_some(),
            DriverZ2 => self.driver_z2.is_some(),
            DriverU => self.driver_u.is_some(),
            TerminalX => self.terminal_x.is_some(),
            RunningX => self.running_x.is_some(),
            RunningY => self.running_y.is_some(),
            RunningZ1 => self.running_z1.is_some(),
            RunningZ2 => self.running_z2.is_some(),
            RunningU => self.running_u.is_some(),
            TerminalCostX => self.terminal_cost_x.is_some(),
            InitialCostY => self.initial_cost_y.is_some(),
        };
        present || partial.is_empty(&self.dims) || !self.supplied.contains(partial.base().name())
    }

    /// Evaluates a coefficient map as a vector (scalars become length 1).
    pub(crate) fn eval_base(&self, base: Base, pt: &Point) -> DVector<f64> {
        match base {
            Base::Drift => self.drift(pt),
            Base::Sigma1 => self.sigma1(pt),
            Base::Sigma2 => self.sigma2(pt),
            Base::Obs => DVector::from_element(1, self.obs(pt)),
            Base::Driver => self.driver(pt),
            Base::Terminal => self.terminal(&pt.x),
            Base::Running => DVector::from_element(1, self.running(pt)),
            Base::TerminalCost => DVector::from_element(1, self.terminal_cost(&pt.x)),
            Base::InitialCost => DVector::from_element(1, self.initial_cost(&pt.y)),
        }
    }

    /// Evaluates a partial as a Jacobian matrix; gradients become one row.
    pub(crate) fn eval_partial(&self, partial: Partial, pt: &Point) -> Result<DMatrix<f64>> {
        use Partial::*;
        let row = |v: DVector<f64>| DMatrix::from_row_slice(1, v.len(), v.as_slice());
        Ok(match partial {
            DriftX => self.drift_x(pt)?,
            DriftU => self.drift_u(pt)?,
            Sigma1X => self.sigma1_x(pt)?,
            Sigma1U => self.sigma1_u(pt)?,
            Sigma2X => self.sigma2_x(pt)?,
            Sigma2U => self.sigma2_u(pt)?,
            ObsX => row(self.obs_x(pt)?),
            ObsU => row(self.obs_u(pt)?),
            DriverX => self.driver_x(pt)?,
            DriverY => self.driver_y(pt)?,
            DriverZ1 => self.driver_z1(pt)?,
            DriverZ2 => self.driver_z2(pt)?,
            DriverU => self.driver_u(pt)?,
            TerminalX => self.terminal_x(&pt.x)?,
            RunningX => row(self.running_x(pt)?),
            RunningY => row(self.running_y(pt)?),
            RunningZ1 => row(self.running_z1(pt)?),
            RunningZ2 => row(self.running_z2(pt)?),
            RunningU => row(self.running_u(pt)?),
            TerminalCostX => row(self.terminal_cost_x(&pt.x)?),
            InitialCostY => row(self.initial_cost_y(&pt.y)?),
        })
    }
}
