#include "sslct/common.hpp"

namespace sslct {

const char* version() { return "0.1.0"; }

}  // namespace sslct
