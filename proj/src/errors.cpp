#include "ntklab/errors.hpp"

namespace ntk {

void require_dims(bool ok, const std::string& what) {
    if (!ok) throw DimensionError("dimension mismatch: " + what);
}

}  // namespace ntk
