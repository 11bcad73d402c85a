#ifndef STPATCH_VERSION_HPP
#define STPATCH_VERSION_HPP

namespace stpatch {

inline constexpr const char* kToolkitVersion = "0.1.0";

} // namespace stpatch

#endif
