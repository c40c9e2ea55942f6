#pragma once

#include <array>

namespace meshmorph {

// Six-point degree-4 triangle rule in barycentric coordinates; weights sum
// to one, so integral = area * sum(w_q * f(x_q)).
struct TriQuadPoint {
    std::array<double, 3> bary;
    double weight;
};

inline constexpr std::array<TriQuadPoint, 6> kTriQuadDeg4 = {{
    {{0.108103018168070, 0.445948490915965, 0.445948490915965}, 0.223381589678011},
    {{0.445948490915965, 0.108103018168070, 0.445948490915965}, 0.223381589678011},
    {{0.445948490915965, 0.445948490915965, 0.108103018168070}, 0.223381589678011},
    {{0.816847572980459, 0.091576213509771, 0.091576213509771}, 0.109951743655322},
    {{0.091576213509771, 0.816847572980459, 0.091576213509771}, 0.109951743655322},
    {{0.091576213509771, 0.091576213509771, 0.816847572980459}, 0.109951743655322},
}};

}  // namespace meshmorph
