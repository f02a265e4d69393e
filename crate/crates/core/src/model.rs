//! Encoder, generator and discriminator bundled with their parameters.

use std::collections::BTreeMap;

use mfim_autograd::{Array, Binder, ParamSet, Tape, Var};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{MfimError, Result};
use crate::generator::{Discriminator, Generator, GeneratorConfig};
use crate::nn::seeded_rng;
use crate::routing::{assemble, Role, RoutingPlan};
use crate::style::{StyleCodes, StyleMaps};

pub struct Models {
    pub generator: Generator,
    pub encoder: Encoder,
    pub discriminator: Discriminator,
    /// Encoder and generator parameters, optimised together.
    pub g_params: ParamSet,
    pub d_params: ParamSet,
}

impl Models {
    pub fn new(gcfg: &GeneratorConfig, ecfg: &EncoderConfig, seed: u64) -> Result<Self> {
        let generator = Generator::new(gcfg.clone())?;
        let encoder = Encoder::new(ecfg.clone(), generator.table.clone())?;
        let discriminator = Discriminator::new(gcfg.clone());
        let mut rng = seeded_rng(seed);
        let mut g_params = generator.init_params(&mut rng);
        g_params.extend(encoder.init_params(&mut rng));
        let d_params = discriminator.init_params(&mut rng);
        Ok(Self {
            generator,
            encoder,
            discriminator,
            g_params,
            d_params,
        })
    }

    /// Encodes every role's image, routes the codes per `plan` and
    /// synthesises. Style maps come from the target.
    pub fn generate<'t>(
        &self,
        b: &Binder<'t, '_>,
        images: &BTreeMap<Role, Var<'t>>,
        plan: &RoutingPlan,
    ) -> Result<Var<'t>> {
        let mut codes: BTreeMap<Role, StyleCodes<Var<'t>>> = BTreeMap::new();
        let mut target_maps: Option<StyleMaps<Var<'t>>> = None;
        for role in plan.roles() {
            let x = *images
                .get(&role)
                .ok_or_else(|| MfimError::Argument(format!("no image given for role `{role}`")))?;
            let (c, m) = self.encoder.encode(b, x)?;
            codes.insert(role, c);
            if role == Role::Target {
                target_maps = Some(m);
            }
        }
        let maps = target_maps.ok_or_else(|| MfimError::Argument("routing plan has no target".into()))?;
        let (c, m) = assemble(&codes, &maps, plan)?;
        self.generator.synthesize(b, &c, &m)
    }

    pub fn generate_arrays(&self, images: &BTreeMap<Role, Array>, plan: &RoutingPlan) -> Result<Array> {
        let tape = Tape::new();
        let b = Binder::frozen(&tape, &self.g_params);
        let vars = images.iter().map(|(r, a)| (*r, tape.constant(a.clone()))).collect();
        Ok((*self.generate(&b, &vars, plan)?.value()).clone())
    }
}
