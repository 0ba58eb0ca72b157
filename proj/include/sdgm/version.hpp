#ifndef SDGM_VERSION_HPP
#define SDGM_VERSION_HPP

namespace sdgm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sdgm

#endif  // SDGM_VERSION_HPP
