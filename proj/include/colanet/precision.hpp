#pragma once

// Element type of every tensor. Defining COLANET_REAL=double builds the same
// code in double precision, which finite-difference checks rely on. The inline
// namespace keeps float and double instantiations distinct at link time, so
// both can live in one program.
#ifndef COLANET_REAL
#define COLANET_REAL float
#endif

#define COLANET_PRECISION_JOIN2(a, b) a##b
#define COLANET_PRECISION_JOIN(a, b) COLANET_PRECISION_JOIN2(a, b)
#define COLANET_PRECISION_NS COLANET_PRECISION_JOIN(real_, COLANET_REAL)

namespace colanet {
inline namespace COLANET_PRECISION_NS {
using real = COLANET_REAL;
}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
