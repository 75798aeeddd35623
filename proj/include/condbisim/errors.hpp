#pragma once

#include <stdexcept>
#include <string>

namespace condbisim {

// Base class for all toolkit errors. Subclasses name the condition so callers
// (and the CLI exit-code mapping) can distinguish config mistakes from
// numerical failures.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define CONDBISIM_ERROR(Name)                                          \
  struct Name : Error {                                                \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

CONDBISIM_ERROR(SchemaError);        // malformed spec/config document
CONDBISIM_ERROR(StochasticityError); // distribution does not sum to one / negative mass
CONDBISIM_ERROR(UnknownKind);        // unrecognized generator kind
CONDBISIM_ERROR(ParamRange);         // parameter outside its admissible range
CONDBISIM_ERROR(IndexError);         // state/action/context index out of range
CONDBISIM_ERROR(MapDomainError);     // homomorphism maps do not cover the domain
CONDBISIM_ERROR(BlockStructureError);// observation maps are not jointly injective
CONDBISIM_ERROR(NumericOverflow);    // non-finite intermediate value
CONDBISIM_ERROR(SingularSystem);     // linear solve failed
CONDBISIM_ERROR(LengthMismatch);     // vector lengths disagree
CONDBISIM_ERROR(Infeasible);         // transport marginals inconsistent / unnormalized
CONDBISIM_ERROR(NonConvergence);     // iteration cap exceeded
CONDBISIM_ERROR(DimensionMismatch);  // embedding/moment dimensions disagree
CONDBISIM_ERROR(ModeMismatch);       // operation invoked in the wrong config mode
CONDBISIM_ERROR(NaNGuard);           // loss or gradient became non-finite
CONDBISIM_ERROR(DivergenceGuard);    // training diverged
CONDBISIM_ERROR(UnknownContext);     // context value outside the declared family
CONDBISIM_ERROR(ShapeMismatch);      // table shape disagrees with declared sizes
CONDBISIM_ERROR(EmptyResults);       // report requested over no inputs
CONDBISIM_ERROR(ConfigError);        // CLI/config-level mistake
CONDBISIM_ERROR(DegenerateGrid);     // Lipschitz grid has no admissible pairs

#undef CONDBISIM_ERROR

}  // namespace condbisim
